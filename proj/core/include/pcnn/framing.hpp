#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pcnn/autograd.hpp"

namespace pcnn {

using Waveform = std::vector<double>;

// Rectangular framing. `overlap` is the number of samples shared by two
// consecutive frames, so the hop is frame_len - overlap.
struct FrameSpec {
    std::size_t frame_len = 512;
    std::size_t overlap = 256;

    std::size_t hop() const { return frame_len - overlap; }
    void validate() const;
};

// ceil((M - L) / (L - S) + 1), and 1 when M <= L.
std::size_t frame_count(std::size_t num_samples, const FrameSpec& spec);

// Number of samples spanned by `frames` frames.
std::size_t covered_span(std::size_t frames, const FrameSpec& spec);

// [M] -> [1, F, L]; frame i starts at i*hop, the tail is zero padded.
Tensor segment(std::span<const double> x, const FrameSpec& spec);
Var segment(const Var& x, const FrameSpec& spec);

// [1, F, L] -> [M]; shifted frames are summed and divided by the number of
// frames covering each sample.
Waveform overlap_add(const Tensor& frames, const FrameSpec& spec, std::size_t num_samples);
Var overlap_add(const Var& frames, const FrameSpec& spec, std::size_t num_samples);

} // namespace pcnn
