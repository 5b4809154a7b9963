#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pcnn/autograd.hpp"

// Differentiable operations over Var. Every op is a pure function of its
// inputs; when any input is tracked the op is recorded with its adjoint.
namespace pcnn::ops {

// Elementwise arithmetic on identically shaped operands.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var mean(const Var& a);
// mean((a - b)^2)
Var mse(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
// Rank-3 axis permutation: out.dim(i) == a.dim(perm[i]).
Var permute(const Var& a, std::array<std::size_t, 3> perm);
Var concat(const std::vector<Var>& parts); // along axis 0
Var slice(const Var& a, std::size_t begin, std::size_t count); // along axis 0

struct Conv2dOptions {
    std::array<std::size_t, 2> stride{1, 1};
    std::array<std::size_t, 2> dilation{1, 1};
    std::array<std::size_t, 2> padding{0, 0};
    std::size_t groups = 1;
};

// Cross-correlation (no kernel flip) of x[Cin,H,W] with w[Cout,Cin/groups,kh,kw].
// Pass an empty Var as bias for a bias-free layer.
Var conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dOptions& opt = {});

// x[Cin,Len], w[Cout,Cin,1], bias[Cout] (or empty) -> [Cout,Len].
Var pointwise_conv1d(const Var& x, const Var& w, const Var& bias);

// [C*r,T,F] -> [C,T,F*r]; out[c,t,f*r+j] = in[j*C+c,t,f].
Var subpixel_shuffle(const Var& x, std::size_t r);
// Exact inverse of subpixel_shuffle on plain tensors.
Tensor subpixel_unshuffle(const Tensor& x, std::size_t r);

// Normalizes over `axes` (ascending). gamma/beta are shaped like the
// extents of those axes.
Var layer_norm(const Var& x, const std::vector<std::size_t>& axes, const Var& gamma, const Var& beta,
               double eps = 1e-8);

enum class Activation { relu, sigmoid, tanh };
Var activation(const Var& x, Activation kind);
inline Var relu(const Var& x) { return activation(x, Activation::relu); }
inline Var sigmoid(const Var& x) { return activation(x, Activation::sigmoid); }
inline Var tanh(const Var& x) { return activation(x, Activation::tanh); }

// Per-channel leaky slope along axis 0; `slope` has extent dim(0) or 1.
Var prelu(const Var& x, const Var& slope);

Var softmax(const Var& x, std::size_t axis);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Average over every axis except `kept_axis`; returns a 1-D tensor.
Var global_pool(const Var& x, std::size_t kept_axis);

// x[C,...] scaled by gains[C].
Var scale_channels(const Var& x, const Var& gains);

// Mixes a rank-3 tensor along `axis` with a square matrix:
// out[..i..] = sum_j m[i,j] * v[..j..].
Var axis_mix(const Var& v, const Var& m, std::size_t axis);

struct GruWeights {
    Var w_ih; // [3H, D], rows ordered reset, update, candidate
    Var w_hh; // [3H, H]
    Var b_ih; // [3H]
    Var b_hh; // [3H]
};

// Runs a GRU over x[T,D] (or a batch x[B,T,D] of independent sequences
// sharing h0[H]). Returns the hidden states [T,H] (or [B,T,H]).
//   r = sig(W_ir x + b_ir + W_hr h + b_hr)
//   z = sig(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + W_hn (r*h) + b_hn)
//   h' = (1 - z) * n + z * h
Var gru_layer(const Var& x, const Var& h0, const GruWeights& weights);

double sigmoid_scalar(double v);

} // namespace pcnn::ops
