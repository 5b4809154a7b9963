#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pcnn/autograd.hpp"
#include "pcnn/framing.hpp"

namespace pcnn::spectral {

struct StftConfig {
    std::size_t frame_size = 512;
    std::size_t hop = 256;

    void validate() const;
};

// One-sided STFT with a periodic Hann window. The signal is zero padded by
// frame_size - hop on both sides so every sample is seen by the same number
// of frames; num_samples is kept for the inverse.
struct Spectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0; // frame_size / 2 + 1
    StftConfig config;
    std::size_t num_samples = 0;
    std::vector<std::complex<double>> values; // [frames x bins], row-major

    std::complex<double> at(std::size_t t, std::size_t k) const { return values[t * bins + k]; }
};

std::vector<double> hann_window(std::size_t n);

std::size_t stft_frame_count(std::size_t num_samples, const StftConfig& config);

Spectrogram stft(std::span<const double> x, const StftConfig& config = {});

// Weighted overlap-add inverse (sum of w * frame divided by sum of w^2).
Waveform istft(const Spectrogram& spec);

// |STFT(x)| as a [frames, bins] Var, differentiable with respect to x.
// Bins with zero magnitude pass no gradient.
Var stft_magnitude(const Var& x, const StftConfig& config = {});

// Scales the noise so that 10*log10(P_clean / P_noise) == snr_db, then adds it.
Waveform mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr_db);

double snr_db(std::span<const double> clean, std::span<const double> noise);

struct SsnrConfig {
    std::size_t frame = 512;
    std::size_t hop = 256;
    double floor_db = -10.0;
    double ceil_db = 35.0;
};

// Segmental SNR: mean over frames of the clipped per-frame SNR. Frames whose
// clean energy is zero are skipped.
double ssnr(std::span<const double> clean, std::span<const double> estimate, const SsnrConfig& config = {});

} // namespace pcnn::spectral
