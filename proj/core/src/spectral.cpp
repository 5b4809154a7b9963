#include "pcnn/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pcnn::spectral {

void StftConfig::validate() const {
    if (frame_size < 2 || (frame_size & (frame_size - 1)) != 0)
        throw std::invalid_argument("stft frame size " + std::to_string(frame_size) + " is not a power of two");
    if (hop == 0 || hop > frame_size)
        throw std::invalid_argument("stft hop " + std::to_string(hop) + " must be in [1, frame size]");
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

std::size_t stft_frame_count(std::size_t num_samples, const StftConfig& config) {
    const std::size_t padded = num_samples + 2 * (config.frame_size - config.hop);
    if (padded <= config.frame_size) return 1;
    return (padded - config.frame_size + config.hop - 1) / config.hop + 1;
}

namespace {

// Twiddle tables and window for one frame size.
struct DftPlan {
    std::size_t n, bins, pad;
    std::vector<double> window, cos_t, sin_t;

    explicit DftPlan(const StftConfig& config)
        : n(config.frame_size), bins(config.frame_size / 2 + 1), pad(config.frame_size - config.hop),
          window(hann_window(config.frame_size)), cos_t(n), sin_t(n) {
        for (std::size_t i = 0; i < n; ++i) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
            cos_t[i] = std::cos(phase);
            sin_t[i] = std::sin(phase);
        }
    }

    // Padded index p maps to signal index p - pad.
    double sample(std::span<const double> x, std::size_t p) const {
        return (p < pad || p - pad >= x.size()) ? 0.0 : x[p - pad];
    }
};

void forward_frames(std::span<const double> x, const StftConfig& config, const DftPlan& plan, std::size_t frames,
                    std::vector<std::complex<double>>& out) {
    out.assign(frames * plan.bins, {});
    std::vector<double> buf(plan.n);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < plan.n; ++i) buf[i] = plan.window[i] * plan.sample(x, t * config.hop + i);
        for (std::size_t k = 0; k < plan.bins; ++k) {
            double re = 0.0, im = 0.0;
            std::size_t idx = 0;
            for (std::size_t i = 0; i < plan.n; ++i) {
                re += buf[i] * plan.cos_t[idx];
                im -= buf[i] * plan.sin_t[idx];
                idx += k;
                if (idx >= plan.n) idx -= plan.n;
            }
            out[t * plan.bins + k] = {re, im};
        }
    }
}

} // namespace

Spectrogram stft(std::span<const double> x, const StftConfig& config) {
    config.validate();
    if (x.empty()) throw std::invalid_argument("stft: empty input");
    const DftPlan plan(config);
    Spectrogram s;
    s.config = config;
    s.bins = plan.bins;
    s.num_samples = x.size();
    s.frames = stft_frame_count(x.size(), config);
    forward_frames(x, config, plan, s.frames, s.values);
    return s;
}

Waveform istft(const Spectrogram& spec) {
    spec.config.validate();
    const DftPlan plan(spec.config);
    if (spec.bins != plan.bins || spec.values.size() != spec.frames * spec.bins || spec.num_samples == 0 ||
        spec.frames != stft_frame_count(spec.num_samples, spec.config))
        throw std::invalid_argument("istft: spectrogram metadata is inconsistent (frames " +
                                    std::to_string(spec.frames) + ", bins " + std::to_string(spec.bins) + ", samples " +
                                    std::to_string(spec.num_samples) + ")");
    const std::size_t n = plan.n, hop = spec.config.hop;
    const std::size_t span = (spec.frames - 1) * hop + n;
    std::vector<double> acc(span, 0.0), wsum(span, 0.0), frame(n);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            double v = spec.at(t, 0).real();
            // Nyquist bin alternates sign
            v += ((i & 1) ? -1.0 : 1.0) * spec.at(t, n / 2).real();
            std::size_t idx = i;
            for (std::size_t k = 1; k < n / 2; ++k) {
                const auto c = spec.at(t, k);
                v += 2.0 * (c.real() * plan.cos_t[idx] - c.imag() * plan.sin_t[idx]);
                idx += i;
                if (idx >= n) idx -= n;
            }
            frame[i] = v / static_cast<double>(n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            acc[t * hop + i] += plan.window[i] * frame[i];
            wsum[t * hop + i] += plan.window[i] * plan.window[i];
        }
    }
    Waveform out(spec.num_samples);
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
        const std::size_t p = i + plan.pad;
        if (wsum[p] < 1e-12)
            throw std::invalid_argument("istft: window/hop combination leaves sample " + std::to_string(i) +
                                        " unrecoverable");
        out[i] = acc[p] / wsum[p];
    }
    return out;
}

Var stft_magnitude(const Var& x, const StftConfig& config) {
    config.validate();
    if (x.shape().size() != 1) throw std::invalid_argument("stft_magnitude: input must be 1-D, got " + shape_str(x.shape()));
    auto plan = std::make_shared<DftPlan>(config);
    const std::size_t frames = stft_frame_count(x.dim(0), config);
    std::vector<std::complex<double>> bins;
    forward_frames(x.value().data(), config, *plan, frames, bins);
    Tensor mag({frames, plan->bins});
    for (std::size_t i = 0; i < bins.size(); ++i) mag[i] = std::abs(bins[i]);
    return make_result(std::move(mag), {x}, [plan, config, frames, bins = std::move(bins)](detail::Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        const std::size_t len = g.numel();
        std::vector<double> gre(plan->bins), gim(plan->bins);
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t k = 0; k < plan->bins; ++k) {
                const auto c = bins[t * plan->bins + k];
                const double m = std::abs(c);
                const double up = (*n.grad)[t * plan->bins + k];
                gre[k] = m > 0.0 ? up * c.real() / m : 0.0;
                gim[k] = m > 0.0 ? up * c.imag() / m : 0.0;
            }
            for (std::size_t i = 0; i < plan->n; ++i) {
                const std::size_t p = t * config.hop + i;
                if (p < plan->pad || p - plan->pad >= len) continue;
                double s = 0.0;
                std::size_t idx = 0;
                for (std::size_t k = 0; k < plan->bins; ++k) {
                    // re = sum w y cos, im = -sum w y sin
                    s += gre[k] * plan->cos_t[idx] - gim[k] * plan->sin_t[idx];
                    idx += i;
                    if (idx >= plan->n) idx -= plan->n;
                }
                g[p - plan->pad] += s * plan->window[i];
            }
        }
    });
}

namespace {
double power(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s / static_cast<double>(x.size());
}
} // namespace

double snr_db(std::span<const double> clean, std::span<const double> noise) {
    if (clean.size() != noise.size() || clean.empty()) throw std::invalid_argument("snr_db: length mismatch");
    return 10.0 * std::log10(power(clean) / power(noise));
}

Waveform mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr) {
    if (clean.size() != noise.size())
        throw std::invalid_argument("mix_at_snr: clean has " + std::to_string(clean.size()) + " samples, noise has " +
                                    std::to_string(noise.size()));
    if (clean.empty()) throw std::invalid_argument("mix_at_snr: empty input");
    if (!std::isfinite(snr)) throw std::invalid_argument("mix_at_snr: SNR must be finite");
    const double pn = power(noise);
    if (!(pn > 0.0)) throw std::invalid_argument("mix_at_snr: noise is silent");
    const double gain = std::sqrt(power(clean) / (pn * std::pow(10.0, snr / 10.0)));
    Waveform out(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) out[i] = clean[i] + gain * noise[i];
    return out;
}

double ssnr(std::span<const double> clean, std::span<const double> estimate, const SsnrConfig& config) {
    if (clean.size() != estimate.size())
        throw std::invalid_argument("ssnr: clean has " + std::to_string(clean.size()) + " samples, estimate has " +
                                    std::to_string(estimate.size()));
    if (clean.empty() || config.frame == 0 || config.hop == 0) throw std::invalid_argument("ssnr: empty input");
    const std::size_t frame = std::min(config.frame, clean.size());
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t start = 0; start + frame <= clean.size(); start += config.hop) {
        double sig = 0.0, err = 0.0;
        for (std::size_t i = start; i < start + frame; ++i) {
            sig += clean[i] * clean[i];
            const double d = clean[i] - estimate[i];
            err += d * d;
        }
        if (sig <= 0.0) continue;
        const double db = err > 0.0 ? 10.0 * std::log10(sig / err) : config.ceil_db;
        total += std::clamp(db, config.floor_db, config.ceil_db);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("ssnr: clean signal is silent in every frame");
    return total / static_cast<double>(used);
}

} // namespace pcnn::spectral
