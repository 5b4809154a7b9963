#include "pcnn/framing.hpp"

#include <stdexcept>
#include <string>

namespace pcnn {

void FrameSpec::validate() const {
    if (frame_len == 0) throw std::invalid_argument("frame length must be >= 1");
    if (overlap >= frame_len)
        throw std::invalid_argument("overlap " + std::to_string(overlap) + " must be smaller than frame length " +
                                    std::to_string(frame_len));
}

std::size_t frame_count(std::size_t num_samples, const FrameSpec& spec) {
    spec.validate();
    if (num_samples <= spec.frame_len) return 1;
    const std::size_t hop = spec.hop();
    // integer ceil of (M - L) / hop, plus the first frame
    return (num_samples - spec.frame_len + hop - 1) / hop + 1;
}

std::size_t covered_span(std::size_t frames, const FrameSpec& spec) {
    return (frames - 1) * spec.hop() + spec.frame_len;
}

namespace {

Tensor segment_values(std::span<const double> x, const FrameSpec& spec) {
    if (x.empty()) throw std::invalid_argument("segment: empty waveform");
    const std::size_t frames = frame_count(x.size(), spec);
    const std::size_t len = spec.frame_len, hop = spec.hop();
    Tensor out({1, frames, len}, 0.0);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t i = 0; i < len && f * hop + i < x.size(); ++i) out[f * len + i] = x[f * hop + i];
    return out;
}

std::vector<double> coverage(std::size_t frames, const FrameSpec& spec, std::size_t num_samples) {
    std::vector<double> count(num_samples, 0.0);
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t i = 0; i < spec.frame_len && f * spec.hop() + i < num_samples; ++i)
            count[f * spec.hop() + i] += 1.0;
    return count;
}

void check_frames(const Shape& shape, const FrameSpec& spec, std::size_t num_samples) {
    spec.validate();
    if (shape.size() != 3 || shape[0] != 1 || shape[2] != spec.frame_len)
        throw std::invalid_argument("overlap_add: frames shape " + shape_str(shape) + " inconsistent with frame length " +
                                    std::to_string(spec.frame_len));
    if (num_samples == 0) throw std::invalid_argument("overlap_add: output length must be >= 1");
    const std::size_t span = covered_span(shape[1], spec);
    if (num_samples > span)
        throw std::invalid_argument("overlap_add: requested " + std::to_string(num_samples) +
                                    " samples but frames cover only " + std::to_string(span));
}

} // namespace

Tensor segment(std::span<const double> x, const FrameSpec& spec) { return segment_values(x, spec); }

Var segment(const Var& x, const FrameSpec& spec) {
    if (x.shape().size() != 1) throw std::invalid_argument("segment: waveform must be 1-D, got " + shape_str(x.shape()));
    Tensor out = segment_values(x.value().data(), spec);
    const std::size_t frames = out.dim(1), num_samples = x.dim(0);
    return make_result(std::move(out), {x}, [spec, frames, num_samples](detail::Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        const std::size_t len = spec.frame_len, hop = spec.hop();
        for (std::size_t f = 0; f < frames; ++f)
            for (std::size_t i = 0; i < len && f * hop + i < num_samples; ++i) g[f * hop + i] += (*n.grad)[f * len + i];
    });
}

Var overlap_add(const Var& frames, const FrameSpec& spec, std::size_t num_samples) {
    check_frames(frames.shape(), spec, num_samples);
    const std::size_t count = frames.dim(1), len = spec.frame_len, hop = spec.hop();
    std::vector<double> norm = coverage(count, spec, num_samples);
    Tensor out({num_samples}, 0.0);
    for (std::size_t f = 0; f < count; ++f)
        for (std::size_t i = 0; i < len && f * hop + i < num_samples; ++i)
            out[f * hop + i] += frames.value()[f * len + i];
    for (std::size_t i = 0; i < num_samples; ++i) out[i] /= norm[i];
    return make_result(std::move(out), {frames}, [count, len, hop, num_samples, norm = std::move(norm)](detail::Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        for (std::size_t f = 0; f < count; ++f)
            for (std::size_t i = 0; i < len && f * hop + i < num_samples; ++i)
                g[f * len + i] += (*n.grad)[f * hop + i] / norm[f * hop + i];
    });
}

Waveform overlap_add(const Tensor& frames, const FrameSpec& spec, std::size_t num_samples) {
    const Var out = overlap_add(Var(frames), spec, num_samples);
    return out.value().values();
}

} // namespace pcnn
