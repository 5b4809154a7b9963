#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "pcnn/ops.hpp"
#include "pcnn/params.hpp"

// PCNN sub-networks. Each block has an initializer that registers its
// parameters under a name prefix and a forward function that reads them
// back through a Scope. Feature maps are laid out [C, T, F]: channels,
// frames, per-frame feature width.
namespace pcnn::blocks {

struct BlockConfig {
    std::size_t channels = 64;
    std::size_t attention_dim = 16; // query/key width in Self-CTFA
    std::size_t gru_hidden = 64;
    std::size_t reduction = 4;      // channel-attention bottleneck ratio
    double norm_eps = 1e-5;

    std::size_t attention_hidden() const { return channels / reduction > 0 ? channels / reduction : 1; }
};

inline constexpr std::size_t kDenseLayers = 4;
inline constexpr std::size_t kMbdcBranches = 3;
inline constexpr std::size_t kMbdcDilations[kMbdcBranches] = {1, 2, 4};

// Channel layer norm followed by PReLU, as used after most convolutions.
void init_norm_prelu(ParamInit& init, const std::string& prefix, std::size_t channels);
Var norm_prelu(const Var& x, const Scope& p, double eps);
Var channel_norm(const Var& x, const Scope& p, double eps);

// Four (1,3) convolutions with dilations 1, 2, 4, 8 along the width; layer
// i sees the concatenation of the block input and all earlier outputs and
// emits C channels. Returns the last layer's output.
void init_dense_block(ParamInit& init, const std::string& prefix, std::size_t channels);
Var dilated_dense_block(const Var& x, const Scope& p, double eps);

// [1, Fr, L] -> [C, Fr, L/2]
void init_encoder(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var encoder_forward(const Var& frames, const Scope& p, const BlockConfig& cfg);

// Squeeze-excitation gating: avg pool -> fc -> relu -> fc -> sigmoid -> scale.
void init_channel_attention(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var channel_attention_gates(const Var& x, const Scope& p);
Var channel_attention(const Var& x, const Scope& p);

// Three 3x3 branches with dilations 1, 2, 4, each gated by its own channel
// attention, summed.
void init_mbdc(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var mbdc_forward(const Var& x, const Scope& p);

struct AttentionMaps {
    Var channel;   // [C, C]
    Var time;      // [T, T]
    Var frequency; // [F, F]
};

struct SelfCtfaTrace {
    AttentionMaps maps;
    // Multiply-accumulates spent building the three maps from the pooled
    // features (query/key projections and the query-key products).
    std::uint64_t map_macs = 0;
};

void init_self_ctfa(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var self_ctfa_forward(const Var& x, const Scope& p, SelfCtfaTrace* trace = nullptr);

// Concatenate -> depthwise 3x3 -> pointwise back to C -> channel attention.
void init_hfb(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var hfb_forward(const Var& local, const Var& global, const Scope& p);

// GRU along T for every feature index, projected back to C channels.
void init_ffn_gru(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var ffn_gru_forward(const Var& x, const Scope& p);

// y = x + HFB(MBDC(LN(x)), SelfCTFA(LN(x))); out = y + FFN(LN(y))
void init_pcb(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var pcb_forward(const Var& x, const Scope& p, const BlockConfig& cfg);

// Returns mask * enc_out with mask = relu(conv(tanh(conv A) * sigmoid(conv B)))
// where [A; B] = prelu(conv_expand(sep_out)).
void init_masking(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var masking_mask(const Var& sep_out, const Scope& p);
Var masking_forward(const Var& sep_out, const Var& enc_out, const Scope& p);

// [C, Fr, L/2] -> [1, Fr, L]
void init_decoder(ParamInit& init, const std::string& prefix, const BlockConfig& cfg);
Var decoder_forward(const Var& x, const Scope& p, const BlockConfig& cfg);

} // namespace pcnn::blocks
