#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pcnn/model.hpp"

// Closed-form accounting for the PCNN architecture: receptive fields and
// sampling rates of dilated kernels, parameter counts, and attention cost.
namespace pcnn::analysis {

// (k - 1) * d + 1 along one axis.
std::size_t receptive_field(std::size_t kernel, std::size_t dilation);
// Largest span over a set of parallel branches sharing the kernel size.
std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations);

struct SamplingRate {
    double with_multiplicity = 0.0; // sum over branches of k^2, over RF^2
    double distinct = 0.0;          // |union of 2-D tap offsets| over RF^2
    std::size_t taps = 0;
    std::size_t distinct_taps = 0;
    std::size_t field = 0;
};

// Square kernels. Dilation 1 with a dense kernel gives 100%.
SamplingRate sampling_rate(const std::vector<std::size_t>& dilations, std::size_t kernel);

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, std::size_t groups = 1,
                        bool bias = true);

struct PcbParams {
    std::size_t norms = 0;
    std::size_t mbdc = 0;
    std::size_t self_ctfa = 0;
    std::size_t hfb = 0;
    std::size_t ffn = 0;
    std::size_t total() const { return norms + mbdc + self_ctfa + hfb + ffn; }
};

struct ParamBreakdown {
    std::size_t encoder = 0;
    PcbParams pcb; // one block; the separator holds num_pcb of them
    std::size_t num_pcb = 0;
    std::size_t masking = 0;
    std::size_t decoder = 0;
    std::size_t total() const { return encoder + pcb.total() * num_pcb + masking + decoder; }
};

std::size_t channel_attention_params(std::size_t channels, std::size_t reduction);
std::size_t dense_block_params(std::size_t channels);
ParamBreakdown param_breakdown(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

struct AttentionCost {
    // Full self-attention applied along each axis of the C x T x F tensor
    // (scores plus weighted sum): 2 (C^2 TF + C T^2 F + C T F^2).
    std::uint64_t full_axiswise = 0;
    // Full self-attention over the flattened T*F positions with C features:
    // 2 (TF)^2 C.
    std::uint64_t full_flattened = 0;
    // Map construction from pooled features: query/key projections plus the
    // query-key products, d (C^2 + T^2 + F^2) + 2 d (C + T + F).
    std::uint64_t ctfa_maps = 0;
    // Leading-order term d (C^2 + T^2 + F^2).
    std::uint64_t ctfa_maps_leading = 0;
    // Applying the three maps to V: C^2 TF + C T^2 F + C T F^2.
    std::uint64_t ctfa_apply = 0;
    // (C^2 + T^2 + F^2) / (C^2 TF + C T^2 F + C T F^2)
    double asymptotic_ratio = 0.0;
};

AttentionCost attention_cost(std::size_t channels, std::size_t frames, std::size_t freq, std::size_t attention_dim);

struct Table1Column {
    std::string type;
    std::size_t kernel = 0;
    std::vector<std::size_t> dilations;
    std::size_t receptive_field = 0;
    SamplingRate sampling;
    double param_ratio = 0.0;           // relative to one 3x3 C->C conv (N)
    double param_ratio_full_width = 0.0; // three C->C branches for MBDC
};

struct Table1 {
    std::vector<Table1Column> columns; // MBDC, dilated conv, conv
    std::size_t channels = 0;
};

// Parameter ratios count weights only. The MBDC column splits C output
// channels across its three branches; the full-width alternative is kept
// alongside.
Table1 table1_report(std::size_t channels = 64);

// Paper-printed values the report is checked against (percent, 2 decimals).
struct Table1Expected {
    std::size_t receptive_field[3] = {9, 9, 9};
    double sampling_percent[3] = {33.33, 11.11, 100.00};
    double param_ratio[3] = {1.00, 1.00, 9.00};
};

// Empty when every reproduced entry rounds to the printed value; otherwise
// one message per mismatch.
std::vector<std::string> table1_deviations(const Table1& table, const Table1Expected& expected = {});

struct AnalysisReport {
    ModelConfig config;
    Table1 table1;
    ParamBreakdown params;
    AttentionCost attention;
    std::size_t attention_c = 0, attention_t = 0, attention_f = 0, attention_d = 0;
};

AnalysisReport analyze(const ModelConfig& config, std::size_t frames = 100, std::size_t freq = 128);

// Deterministic JSON text.
std::string to_text(const AnalysisReport& report);

} // namespace pcnn::analysis
