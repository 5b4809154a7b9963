#include "pcnn/blocks.hpp"

#include <stdexcept>

namespace pcnn::blocks {

namespace {

void init_conv(ParamInit& init, const std::string& prefix, std::size_t cout, std::size_t cin_per_group,
               std::size_t kh, std::size_t kw, bool bias = true) {
    init.uniform(join_name(prefix, "weight"), {cout, cin_per_group, kh, kw}, cin_per_group * kh * kw);
    if (bias) init.zeros(join_name(prefix, "bias"), {cout});
}

void init_conv1d(ParamInit& init, const std::string& prefix, std::size_t cout, std::size_t cin) {
    init.uniform(join_name(prefix, "weight"), {cout, cin, 1}, cin);
    init.zeros(join_name(prefix, "bias"), {cout});
}

Var conv(const Var& x, const Scope& p, const ops::Conv2dOptions& opt = {}) {
    return ops::conv2d(x, p["weight"], p["bias"], opt);
}

ops::Conv2dOptions width_kernel(std::size_t dilation, std::size_t stride = 1) {
    ops::Conv2dOptions opt;
    opt.dilation = {1, dilation};
    opt.padding = {0, dilation};
    opt.stride = {1, stride};
    return opt;
}

void require_feature_map(const char* block, const Var& x) {
    if (x.shape().size() != 3)
        throw std::invalid_argument(std::string(block) + ": expected a [C,T,F] feature map, got " +
                                    shape_str(x.shape()));
}

} // namespace

// ---------------------------------------------------------------------------

void init_norm_prelu(ParamInit& init, const std::string& prefix, std::size_t channels) {
    init.constant(join_name(prefix, "norm.gamma"), {channels}, 1.0);
    init.zeros(join_name(prefix, "norm.beta"), {channels});
    init.constant(join_name(prefix, "prelu.slope"), {channels}, 0.25);
}

Var channel_norm(const Var& x, const Scope& p, double eps) {
    return ops::layer_norm(x, {0}, p["gamma"], p["beta"], eps);
}

Var norm_prelu(const Var& x, const Scope& p, double eps) {
    return ops::prelu(channel_norm(x, p.sub("norm"), eps), p["prelu.slope"]);
}

void init_dense_block(ParamInit& init, const std::string& prefix, std::size_t channels) {
    for (std::size_t i = 0; i < kDenseLayers; ++i) {
        const std::string layer = join_name(prefix, "layer" + std::to_string(i));
        init_conv(init, join_name(layer, "conv"), channels, channels * (i + 1), 1, 3);
        init_norm_prelu(init, layer, channels);
    }
}

Var dilated_dense_block(const Var& x, const Scope& p, double eps) {
    require_feature_map("dilated_dense_block", x);
    std::vector<Var> features{x};
    Var out;
    for (std::size_t i = 0; i < kDenseLayers; ++i) {
        const Scope layer = p.sub("layer" + std::to_string(i));
        const Var in = features.size() == 1 ? x : ops::concat(features);
        out = norm_prelu(conv(in, layer.sub("conv"), width_kernel(std::size_t{1} << i)), layer, eps);
        features.push_back(out);
    }
    return out;
}

void init_encoder(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels;
    init_conv(init, join_name(prefix, "conv_in"), c, 1, 1, 1);
    init_norm_prelu(init, join_name(prefix, "in"), c);
    init_dense_block(init, join_name(prefix, "dense"), c);
    init_conv(init, join_name(prefix, "conv_down"), c, c, 1, 3);
    init_norm_prelu(init, join_name(prefix, "down"), c);
}

Var encoder_forward(const Var& frames, const Scope& p, const BlockConfig& cfg) {
    require_feature_map("encoder", frames);
    if (frames.dim(0) != 1) throw std::invalid_argument("encoder: expected 1 input channel, got " + std::to_string(frames.dim(0)));
    if (frames.dim(2) % 2 != 0)
        throw std::invalid_argument("encoder: frame length " + std::to_string(frames.dim(2)) + " must be even");
    Var h = norm_prelu(conv(frames, p.sub("conv_in")), p.sub("in"), cfg.norm_eps);
    h = dilated_dense_block(h, p.sub("dense"), cfg.norm_eps);
    h = conv(h, p.sub("conv_down"), width_kernel(1, 2));
    return norm_prelu(h, p.sub("down"), cfg.norm_eps);
}

// ---------------------------------------------------------------------------

void init_channel_attention(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels, h = cfg.attention_hidden();
    init_conv1d(init, join_name(prefix, "fc1"), h, c);
    init_conv1d(init, join_name(prefix, "fc2"), c, h);
}

Var channel_attention_gates(const Var& x, const Scope& p) {
    const std::size_t c = x.dim(0);
    Var s = ops::reshape(ops::global_pool(x, 0), {c, 1});
    s = ops::relu(ops::pointwise_conv1d(s, p["fc1.weight"], p["fc1.bias"]));
    s = ops::sigmoid(ops::pointwise_conv1d(s, p["fc2.weight"], p["fc2.bias"]));
    return ops::reshape(s, {c});
}

Var channel_attention(const Var& x, const Scope& p) {
    require_feature_map("channel_attention", x);
    return ops::scale_channels(x, channel_attention_gates(x, p));
}

void init_mbdc(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    for (std::size_t b = 0; b < kMbdcBranches; ++b) {
        const std::string branch = join_name(prefix, "branch" + std::to_string(b));
        init_conv(init, join_name(branch, "conv"), cfg.channels, cfg.channels, 3, 3);
        init_channel_attention(init, join_name(branch, "attn"), cfg);
    }
}

Var mbdc_forward(const Var& x, const Scope& p) {
    require_feature_map("mbdc", x);
    Var acc;
    for (std::size_t b = 0; b < kMbdcBranches; ++b) {
        const Scope branch = p.sub("branch" + std::to_string(b));
        ops::Conv2dOptions opt;
        opt.dilation = {kMbdcDilations[b], kMbdcDilations[b]};
        opt.padding = opt.dilation;
        const Var y = channel_attention(conv(x, branch.sub("conv"), opt), branch.sub("attn"));
        acc = acc.valid() ? ops::add(acc, y) : y;
    }
    return acc;
}

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCtfaBranches[3] = {"channel", "time", "frequency"};
}

void init_self_ctfa(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    for (const char* branch : kCtfaBranches) {
        init_conv1d(init, join_name(prefix, std::string(branch) + ".query"), cfg.attention_dim, 1);
        init_conv1d(init, join_name(prefix, std::string(branch) + ".key"), cfg.attention_dim, 1);
    }
    init_conv(init, join_name(prefix, "value"), cfg.channels, cfg.channels, 1, 1);
}

Var self_ctfa_forward(const Var& x, const Scope& p, SelfCtfaTrace* trace) {
    require_feature_map("self_ctfa", x);
    Var maps[3];
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const Scope branch = p.sub(kCtfaBranches[axis]);
        const std::size_t len = x.dim(axis);
        // 1-D energy feature as a single-channel sequence of length `len`.
        const Var pooled = ops::reshape(ops::global_pool(x, axis), {1, len});
        const std::uint64_t before = mac_counter();
        const Var q = ops::pointwise_conv1d(pooled, branch["query.weight"], branch["query.bias"]);
        const Var k = ops::pointwise_conv1d(pooled, branch["key.weight"], branch["key.bias"]);
        const Var scores = ops::matmul(ops::transpose(q), k);
        maps[axis] = ops::softmax(scores, 1);
        if (trace) trace->map_macs += mac_counter() - before;
    }
    if (trace) trace->maps = {maps[0], maps[1], maps[2]};

    const Var v = conv(x, p.sub("value"));
    Var out = ops::axis_mix(v, maps[0], 0);
    out = ops::add(out, ops::axis_mix(v, maps[1], 1));
    return ops::add(out, ops::axis_mix(v, maps[2], 2));
}

// ---------------------------------------------------------------------------

void init_hfb(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels;
    init_conv(init, join_name(prefix, "depthwise"), 2 * c, 1, 3, 3, false);
    init_conv(init, join_name(prefix, "pointwise"), c, 2 * c, 1, 1, false);
    init_channel_attention(init, join_name(prefix, "attn"), cfg);
}

Var hfb_forward(const Var& local, const Var& global, const Scope& p) {
    require_feature_map("hfb", local);
    if (local.shape() != global.shape())
        throw std::invalid_argument("hfb: local branch " + shape_str(local.shape()) + " and global branch " +
                                    shape_str(global.shape()) + " differ");
    const std::size_t c2 = 2 * local.dim(0);
    ops::Conv2dOptions dw;
    dw.padding = {1, 1};
    dw.groups = c2;
    Var h = ops::conv2d(ops::concat({local, global}), p["depthwise.weight"], Var{}, dw);
    h = ops::conv2d(h, p["pointwise.weight"], Var{});
    return channel_attention(h, p.sub("attn"));
}

// ---------------------------------------------------------------------------

void init_ffn_gru(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels, h = cfg.gru_hidden;
    init.uniform(join_name(prefix, "gru.w_ih"), {3 * h, c}, h);
    init.uniform(join_name(prefix, "gru.w_hh"), {3 * h, h}, h);
    init.zeros(join_name(prefix, "gru.b_ih"), {3 * h});
    init.zeros(join_name(prefix, "gru.b_hh"), {3 * h});
    init_conv1d(init, join_name(prefix, "proj"), c, h);
}

Var ffn_gru_forward(const Var& x, const Scope& p) {
    require_feature_map("ffn_gru", x);
    const std::size_t c = x.dim(0), t = x.dim(1), f = x.dim(2);
    const ops::GruWeights w{p["gru.w_ih"], p["gru.w_hh"], p["gru.b_ih"], p["gru.b_hh"]};
    const std::size_t hid = w.w_hh.dim(1);
    const Var seq = ops::permute(x, {2, 1, 0});                 // [F, T, C]
    const Var hs = ops::gru_layer(seq, Var(Tensor({hid}, 0.0)), w); // [F, T, H]
    const Var flat = ops::reshape(ops::permute(hs, {2, 0, 1}), {hid, f * t});
    const Var proj = ops::pointwise_conv1d(flat, p["proj.weight"], p["proj.bias"]); // [C, F*T]
    return ops::permute(ops::reshape(proj, {c, f, t}), {0, 2, 1});
}

// ---------------------------------------------------------------------------

void init_pcb(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    init.constant(join_name(prefix, "norm1.gamma"), {cfg.channels}, 1.0);
    init.zeros(join_name(prefix, "norm1.beta"), {cfg.channels});
    init_mbdc(init, join_name(prefix, "mbdc"), cfg);
    init_self_ctfa(init, join_name(prefix, "ctfa"), cfg);
    init_hfb(init, join_name(prefix, "hfb"), cfg);
    init.constant(join_name(prefix, "norm2.gamma"), {cfg.channels}, 1.0);
    init.zeros(join_name(prefix, "norm2.beta"), {cfg.channels});
    init_ffn_gru(init, join_name(prefix, "ffn"), cfg);
}

Var pcb_forward(const Var& x, const Scope& p, const BlockConfig& cfg) {
    require_feature_map("pcb", x);
    const Var normed = channel_norm(x, p.sub("norm1"), cfg.norm_eps);
    const Var fused = hfb_forward(mbdc_forward(normed, p.sub("mbdc")), self_ctfa_forward(normed, p.sub("ctfa")),
                                  p.sub("hfb"));
    const Var y = ops::add(x, fused);
    return ops::add(y, ffn_gru_forward(channel_norm(y, p.sub("norm2"), cfg.norm_eps), p.sub("ffn")));
}

// ---------------------------------------------------------------------------

void init_masking(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels;
    init_conv(init, join_name(prefix, "expand"), 2 * c, c, 1, 1);
    init.constant(join_name(prefix, "prelu.slope"), {2 * c}, 0.25);
    init_conv(init, join_name(prefix, "gate_tanh"), c, c, 1, 1);
    init_conv(init, join_name(prefix, "gate_sigmoid"), c, c, 1, 1);
    init_conv(init, join_name(prefix, "mask"), c, c, 1, 1);
}

Var masking_mask(const Var& sep_out, const Scope& p) {
    require_feature_map("masking", sep_out);
    const std::size_t c = sep_out.dim(0);
    const Var doubled = ops::prelu(conv(sep_out, p.sub("expand")), p["prelu.slope"]);
    const Var gate = ops::mul(ops::tanh(conv(ops::slice(doubled, 0, c), p.sub("gate_tanh"))),
                              ops::sigmoid(conv(ops::slice(doubled, c, c), p.sub("gate_sigmoid"))));
    return ops::relu(conv(gate, p.sub("mask")));
}

Var masking_forward(const Var& sep_out, const Var& enc_out, const Scope& p) {
    if (sep_out.shape() != enc_out.shape())
        throw std::invalid_argument("masking: separator output " + shape_str(sep_out.shape()) +
                                    " and encoder output " + shape_str(enc_out.shape()) + " differ");
    return ops::mul(masking_mask(sep_out, p), enc_out);
}

// ---------------------------------------------------------------------------

void init_decoder(ParamInit& init, const std::string& prefix, const BlockConfig& cfg) {
    const std::size_t c = cfg.channels;
    init_dense_block(init, join_name(prefix, "dense"), c);
    init_conv(init, join_name(prefix, "conv_up"), 2 * c, c, 1, 3);
    init_norm_prelu(init, join_name(prefix, "up"), c);
    init_conv(init, join_name(prefix, "conv_out"), 1, c, 1, 1);
}

Var decoder_forward(const Var& x, const Scope& p, const BlockConfig& cfg) {
    require_feature_map("decoder", x);
    if (x.dim(0) != cfg.channels)
        throw std::invalid_argument("decoder: expected " + std::to_string(cfg.channels) + " channels, got " +
                                    std::to_string(x.dim(0)));
    Var h = dilated_dense_block(x, p.sub("dense"), cfg.norm_eps);
    h = ops::subpixel_shuffle(conv(h, p.sub("conv_up"), width_kernel(1)), 2);
    h = norm_prelu(h, p.sub("up"), cfg.norm_eps);
    return conv(h, p.sub("conv_out"));
}

} // namespace pcnn::blocks
