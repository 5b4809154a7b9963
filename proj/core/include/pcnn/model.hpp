#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcnn/blocks.hpp"
#include "pcnn/framing.hpp"
#include "pcnn/params.hpp"
#include "pcnn/spectral.hpp"

namespace pcnn {

// Every architectural hyperparameter in one place.
struct ModelConfig {
    std::size_t frame_len = 512;
    std::size_t overlap = 256;
    std::size_t channels = 64;
    std::size_t num_pcb = 4;
    std::size_t attention_dim = 0; // 0 selects max(4, channels / 4)
    std::size_t gru_hidden = 0;    // 0 selects `channels`
    std::size_t reduction = 4;
    std::size_t stft_frame = 512;
    std::size_t stft_hop = 256;
    double alpha = 0.2;
    double norm_eps = 1e-5;
    std::uint64_t seed = 0;

    void validate() const;

    FrameSpec frame_spec() const { return {frame_len, overlap}; }
    spectral::StftConfig stft() const { return {stft_frame, stft_hop}; }
    blocks::BlockConfig block_config() const;

    bool operator==(const ModelConfig&) const = default;
};

// Small configuration used for gradient checks and the overfit run.
ModelConfig toy_config();

// Plain-text `key = value` schema, one field per line, '#' comments.
// Unknown keys and malformed values are rejected with the line number.
ModelConfig parse_config(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const ModelConfig& config);

// The complete named parameter set of one model instance.
struct PcnnParams {
    ModelConfig config;
    ParamSet tensors;

    bool operator==(const PcnnParams&) const = default;
};

PcnnParams build(const ModelConfig& config);

// segment -> encoder -> PCBs -> mask * encoder output -> decoder -> overlap-add
Var forward(const Scope& params, const ModelConfig& config, const Var& x);
Waveform forward(const PcnnParams& params, std::span<const double> x);

// (1/(T*F)) sum (|S| - |S_hat|)^2 over STFT magnitudes.
Var loss_frequency(const Var& clean, const Var& est, const spectral::StftConfig& stft);
// (1/N) sum (x - x_hat)^2
Var loss_time(const Var& clean, const Var& est);
Var loss_total(const Var& clean, const Var& est, const spectral::StftConfig& stft, double alpha);

double loss_frequency(std::span<const double> clean, std::span<const double> est,
                      const spectral::StftConfig& stft = {});
double loss_time(std::span<const double> clean, std::span<const double> est);
double loss_total(std::span<const double> clean, std::span<const double> est, const spectral::StftConfig& stft = {},
                  double alpha = 0.2);

// L_total of the model output for `noisy` against `clean`.
double evaluate_loss(const PcnnParams& params, std::span<const double> clean, std::span<const double> noisy);
// Same loss with gradients for every parameter.
Gradients loss_gradients(const PcnnParams& params, std::span<const double> clean, std::span<const double> noisy,
                         double* loss_out = nullptr);

class NumericalError : public std::runtime_error {
  public:
    NumericalError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

  private:
    std::size_t step_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Full-batch Adam on a single clip. Returns L_total before each step.
// Throws NumericalError naming the step if the loss becomes non-finite.
std::vector<double> train_toy(PcnnParams& params, std::span<const double> clean, std::span<const double> noisy,
                              std::size_t steps, const AdamOptions& adam = {},
                              const std::function<void(std::size_t, double)>& on_step = {});

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize(const PcnnParams& params);
PcnnParams deserialize(std::string_view bytes);
void save(const PcnnParams& params, const std::filesystem::path& path);
PcnnParams load(const std::filesystem::path& path);

} // namespace pcnn
