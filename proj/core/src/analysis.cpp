#include "pcnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace pcnn::analysis {

std::size_t receptive_field(std::size_t kernel, std::size_t dilation) {
    if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("receptive_field: kernel must be odd");
    if (dilation == 0) throw std::invalid_argument("receptive_field: dilation must be >= 1");
    return (kernel - 1) * dilation + 1;
}

std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations) {
    std::size_t rf = 0;
    for (std::size_t d : dilations) rf = std::max(rf, receptive_field(kernel, d));
    return rf;
}

SamplingRate sampling_rate(const std::vector<std::size_t>& dilations, std::size_t kernel) {
    if (dilations.empty()) throw std::invalid_argument("sampling_rate: no branches");
    SamplingRate s;
    s.field = receptive_field(kernel, dilations);
    std::set<std::pair<long, long>> offsets;
    const long half = static_cast<long>(kernel / 2);
    for (std::size_t d : dilations) {
        s.taps += kernel * kernel;
        for (long i = -half; i <= half; ++i)
            for (long j = -half; j <= half; ++j)
                offsets.emplace(i * static_cast<long>(d), j * static_cast<long>(d));
    }
    s.distinct_taps = offsets.size();
    const double area = static_cast<double>(s.field * s.field);
    s.with_multiplicity = static_cast<double>(s.taps) / area;
    s.distinct = static_cast<double>(s.distinct_taps) / area;
    return s;
}

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, std::size_t groups,
                        bool bias) {
    return cout * (cin / groups) * kh * kw + (bias ? cout : 0);
}

std::size_t channel_attention_params(std::size_t channels, std::size_t reduction) {
    const std::size_t h = std::max<std::size_t>(1, channels / reduction);
    return (h * channels + h) + (channels * h + channels);
}

std::size_t dense_block_params(std::size_t channels) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < blocks::kDenseLayers; ++i)
        n += conv_params(channels * (i + 1), channels, 1, 3) + 3 * channels; // conv + norm + prelu
    return n;
}

ParamBreakdown param_breakdown(const ModelConfig& config) {
    config.validate();
    const blocks::BlockConfig bc = config.block_config();
    const std::size_t c = bc.channels, d = bc.attention_dim, h = bc.gru_hidden;
    const std::size_t attn = channel_attention_params(c, bc.reduction);
    ParamBreakdown p;
    p.encoder = conv_params(1, c, 1, 1) + 3 * c + dense_block_params(c) + conv_params(c, c, 1, 3) + 3 * c;
    p.pcb.norms = 4 * c;
    p.pcb.mbdc = blocks::kMbdcBranches * (conv_params(c, c, 3, 3) + attn);
    p.pcb.self_ctfa = 3 * 2 * (d + d) + conv_params(c, c, 1, 1);
    p.pcb.hfb = conv_params(2 * c, 2 * c, 3, 3, 2 * c, false) + conv_params(2 * c, c, 1, 1, 1, false) + attn;
    p.pcb.ffn = 3 * h * c + 3 * h * h + 6 * h + (c * h + c);
    p.num_pcb = config.num_pcb;
    p.masking = conv_params(c, 2 * c, 1, 1) + 2 * c + 3 * conv_params(c, c, 1, 1);
    p.decoder = dense_block_params(c) + conv_params(c, 2 * c, 1, 3) + 3 * c + conv_params(c, 1, 1, 1);
    return p;
}

std::size_t param_count(const ModelConfig& config) { return param_breakdown(config).total(); }

AttentionCost attention_cost(std::size_t c, std::size_t t, std::size_t f, std::size_t d) {
    if (c == 0 || t == 0 || f == 0 || d == 0) throw std::invalid_argument("attention_cost: dimensions must be positive");
    using u = std::uint64_t;
    const u C = c, T = t, F = f, D = d;
    const u axiswise = C * C * T * F + C * T * T * F + C * T * F * F;
    AttentionCost a;
    a.full_axiswise = 2 * axiswise;
    a.full_flattened = 2 * (T * F) * (T * F) * C;
    a.ctfa_maps_leading = D * (C * C + T * T + F * F);
    a.ctfa_maps = a.ctfa_maps_leading + 2 * D * (C + T + F);
    a.ctfa_apply = axiswise;
    a.asymptotic_ratio = static_cast<double>(C * C + T * T + F * F) / static_cast<double>(axiswise);
    return a;
}

Table1 table1_report(std::size_t channels) {
    if (channels < blocks::kMbdcBranches) throw std::invalid_argument("table1_report: need at least 3 channels");
    Table1 t;
    t.channels = channels;
    const double n = static_cast<double>(conv_params(channels, channels, 3, 3, 1, false));

    auto column = [](std::string type, std::size_t kernel, std::vector<std::size_t> dilations) {
        Table1Column c;
        c.type = std::move(type);
        c.kernel = kernel;
        c.dilations = std::move(dilations);
        return c;
    };
    Table1Column mbdc = column("MBDC", 3, {1, 2, 4});
    // Channel split: branch b emits channels/3 outputs (remainder to the first).
    std::size_t split = 0, full = 0;
    for (std::size_t b = 0; b < blocks::kMbdcBranches; ++b) {
        const std::size_t width = channels / 3 + (b < channels % 3 ? 1 : 0);
        split += conv_params(channels, width, 3, 3, 1, false);
        full += conv_params(channels, channels, 3, 3, 1, false);
    }
    mbdc.param_ratio = static_cast<double>(split) / n;
    mbdc.param_ratio_full_width = static_cast<double>(full) / n;

    Table1Column dilated = column("Dilated Conv", 3, {4});
    dilated.param_ratio = dilated.param_ratio_full_width = 1.0;

    Table1Column dense = column("Conv", 9, {1});
    dense.param_ratio = dense.param_ratio_full_width =
        static_cast<double>(conv_params(channels, channels, 9, 9, 1, false)) / n;

    for (Table1Column* col : {&mbdc, &dilated, &dense}) {
        col->receptive_field = receptive_field(col->kernel, col->dilations);
        col->sampling = sampling_rate(col->dilations, col->kernel);
        t.columns.push_back(*col);
    }
    return t;
}

namespace {
double round2(double v) { return std::round(v * 100.0) / 100.0; }
} // namespace

std::vector<std::string> table1_deviations(const Table1& table, const Table1Expected& expected) {
    std::vector<std::string> out;
    if (table.columns.size() != 3) return {"table must have three columns"};
    for (std::size_t i = 0; i < 3; ++i) {
        const Table1Column& col = table.columns[i];
        if (col.receptive_field != expected.receptive_field[i])
            out.push_back(col.type + ": receptive field " + std::to_string(col.receptive_field) + " != " +
                          std::to_string(expected.receptive_field[i]));
        const double pct = round2(col.sampling.with_multiplicity * 100.0);
        if (std::abs(pct - expected.sampling_percent[i]) > 1e-9)
            out.push_back(col.type + ": sampling rate " + std::to_string(pct) + "% != " +
                          std::to_string(expected.sampling_percent[i]) + "%");
        const double ratio = round2(col.param_ratio);
        if (std::abs(ratio - expected.param_ratio[i]) > 1e-9)
            out.push_back(col.type + ": parameter ratio " + std::to_string(ratio) + " != " +
                          std::to_string(expected.param_ratio[i]));
    }
    return out;
}

AnalysisReport analyze(const ModelConfig& config, std::size_t frames, std::size_t freq) {
    AnalysisReport r;
    r.config = config;
    r.table1 = table1_report(config.channels >= 3 ? config.channels : 3);
    r.params = param_breakdown(config);
    r.attention_c = config.channels;
    r.attention_t = frames;
    r.attention_f = freq;
    r.attention_d = config.block_config().attention_dim;
    r.attention = attention_cost(r.attention_c, frames, freq, r.attention_d);
    return r;
}

std::string to_text(const AnalysisReport& report) {
    using nlohmann::ordered_json;
    auto pct = [](double v) { return round2(v * 100.0); };

    ordered_json table = ordered_json::array();
    for (const auto& col : report.table1.columns) {
        table.push_back({{"type", col.type},
                         {"kernel", std::to_string(col.kernel) + "x" + std::to_string(col.kernel)},
                         {"dilations", col.dilations},
                         {"receptive_field", std::to_string(col.receptive_field) + "x" + std::to_string(col.receptive_field)},
                         {"sampling_rate_percent", pct(col.sampling.with_multiplicity)},
                         {"sampling_rate_distinct_percent", pct(col.sampling.distinct)},
                         {"taps", col.sampling.taps},
                         {"distinct_taps", col.sampling.distinct_taps},
                         {"param_ratio", round2(col.param_ratio)},
                         {"param_ratio_full_width", round2(col.param_ratio_full_width)}});
    }
    const auto deviations = table1_deviations(report.table1);

    const ParamBreakdown& p = report.params;
    const AttentionCost& a = report.attention;
    ordered_json j;
    j["table1"] = {{"channels", report.table1.channels},
                   {"columns", table},
                   {"mbdc_param_interpretation", "channel-split (C/3 outputs per branch); full-width in param_ratio_full_width"},
                   {"matches_printed_values", deviations.empty()},
                   {"deviations", deviations}};
    j["parameters"] = {{"encoder", p.encoder},
                       {"pcb", {{"norms", p.pcb.norms},
                                {"mbdc", p.pcb.mbdc},
                                {"self_ctfa", p.pcb.self_ctfa},
                                {"hfb", p.pcb.hfb},
                                {"ffn", p.pcb.ffn},
                                {"total", p.pcb.total()}}},
                       {"num_pcb", p.num_pcb},
                       {"separator", p.pcb.total() * p.num_pcb},
                       {"masking", p.masking},
                       {"decoder", p.decoder},
                       {"total", p.total()}};
    j["attention"] = {{"C", report.attention_c},
                      {"T", report.attention_t},
                      {"F", report.attention_f},
                      {"d", report.attention_d},
                      {"full_sa_axiswise_macs", a.full_axiswise},
                      {"full_sa_flattened_macs", a.full_flattened},
                      {"ctfa_map_macs", a.ctfa_maps},
                      {"ctfa_map_macs_leading", a.ctfa_maps_leading},
                      {"ctfa_apply_macs", a.ctfa_apply},
                      {"asymptotic_ratio", a.asymptotic_ratio}};
    return j.dump(2) + "\n";
}

} // namespace pcnn::analysis
