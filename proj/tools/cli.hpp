#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pcnn/model.hpp"

// Command-line frontend. `run` is the whole program minus process exit so
// that tests can drive it in-process.
namespace pcnn::cli {

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kNumericalFailure = 2 };

// Largest model gradcheck and overfit accept.
inline constexpr std::size_t kToyParamLimit = 50000;
inline constexpr double kGradcheckTolerance = 1e-4;

// Reporting group of a parameter: "encoder", "pcb0.mbdc", "pcb0.norms", ...
std::string block_of(const std::string& param_name);

struct GradcheckRow {
    std::string block;
    std::size_t tensors = 0;
    std::size_t scalars = 0;
    double max_error = 0.0;
    std::string worst; // parameter with the largest error
    bool pass = false;
};

struct GradcheckResult {
    std::vector<GradcheckRow> rows; // one per block, in parameter order
    double loss = 0.0;
    double tolerance = kGradcheckTolerance;
    bool pass = false;
};

// Backward vs central differences (eps 1e-6) of L_total for every named
// parameter on a short synthetic clip. `corrupt` names a block whose
// backward gradient is deliberately perturbed (negative control).
GradcheckResult gradcheck(const ModelConfig& config, std::size_t samples = 96, const std::string& corrupt = "");

struct Clip {
    std::vector<double> clean, noisy;
};

// 440 Hz tone at amplitude 0.5 plus seeded white noise mixed at 5 dB SNR.
Clip tone_clip(double seconds, std::uint64_t seed);

struct OverfitResult {
    std::vector<double> losses; // L_total before each step
    double initial = 0.0;
    double final = 0.0;         // L_total after the last step
    double ratio = 0.0;         // final / initial
    bool ema_decreasing = false;
    bool pass = false;          // final <= 10% of initial
};

OverfitResult overfit(const ModelConfig& config, double seconds, std::size_t steps, double lr,
                      const std::function<void(std::size_t, double)>& on_step = {});

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pcnn::cli
