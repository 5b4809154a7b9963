#include "pcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pcnn::ops {

namespace {

using detail::Node;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const std::string& arg, const Var& v, std::size_t rank) {
    if (v.shape().size() != rank)
        shape_error(op, arg + " must have rank " + std::to_string(rank) + ", got shape " + shape_str(v.shape()));
}

void require_same_shape(const std::string& op, const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        shape_error(op, "operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad(); }
Tensor& grad_of(Node& n, std::size_t i) { return n.inputs[i]->grad_buffer(); }

// (outer, extent, inner) decomposition of a shape around `axis`.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

} // namespace

double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(n, k)) continue;
            Tensor& g = grad_of(n, k);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*n.grad)[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        if (wants(n, 0)) {
            Tensor& g = grad_of(n, 0);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*n.grad)[i];
        }
        if (wants(n, 1)) {
            Tensor& g = grad_of(n, 1);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= (*n.grad)[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        const Tensor& ga = *n.grad;
        if (wants(n, 0)) {
            Tensor& g = grad_of(n, 0);
            const Tensor& other = n.inputs[1]->value;
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += ga[i] * other[i];
        }
        if (wants(n, 1)) {
            Tensor& g = grad_of(n, 1);
            const Tensor& other = n.inputs[0]->value;
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += ga[i] * other[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= factor;
    return make_result(std::move(out), {a}, [factor](Node& n) {
        Tensor& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * (*n.grad)[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_result(Tensor::scalar(s), {a}, [](Node& n) {
        Tensor& g = grad_of(n, 0);
        const double up = n.grad->item();
        for (double& v : g.data()) v += up;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var mse(const Var& a, const Var& b) {
    require_same_shape("mse", a, b);
    const std::size_t count = a.value().numel();
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return make_result(Tensor::scalar(s / static_cast<double>(count)), {a, b}, [count](Node& n) {
        const double up = n.grad->item() * 2.0 / static_cast<double>(count);
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (wants(n, 0)) {
            Tensor& g = grad_of(n, 0);
            for (std::size_t i = 0; i < count; ++i) g[i] += up * (av[i] - bv[i]);
        }
        if (wants(n, 1)) {
            Tensor& g = grad_of(n, 1);
            for (std::size_t i = 0; i < count; ++i) g[i] -= up * (av[i] - bv[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& n) {
        Tensor& g = grad_of(n, 0);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*n.grad)[i];
    });
}

Var permute(const Var& a, std::array<std::size_t, 3> perm) {
    require_rank("permute", "input", a, 3);
    {
        auto sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        if (sorted != std::array<std::size_t, 3>{0, 1, 2}) shape_error("permute", "perm is not a permutation");
    }
    const Shape& in = a.shape();
    const Shape out_shape{in[perm[0]], in[perm[1]], in[perm[2]]};
    const std::array<std::size_t, 3> in_stride{in[1] * in[2], in[2], 1};
    // Source stride for each output axis.
    const std::array<std::size_t, 3> src{in_stride[perm[0]], in_stride[perm[1]], in_stride[perm[2]]};

    auto gather = [out_shape, src](const Tensor& from, Tensor& to, bool accumulate_back) {
        std::size_t o = 0;
        for (std::size_t i = 0; i < out_shape[0]; ++i)
            for (std::size_t j = 0; j < out_shape[1]; ++j)
                for (std::size_t k = 0; k < out_shape[2]; ++k, ++o) {
                    const std::size_t s = i * src[0] + j * src[1] + k * src[2];
                    if (accumulate_back)
                        to[s] += from[o];
                    else
                        to[o] = from[s];
                }
    };
    Tensor out(out_shape);
    gather(a.value(), out, false);
    return make_result(std::move(out), {a}, [gather](Node& n) { gather(*n.grad, grad_of(n, 0), true); });
}

Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) shape_error("concat", "no inputs");
    Shape shape = parts.front().shape();
    if (shape.empty()) shape_error("concat", "inputs must have rank >= 1");
    std::size_t lead = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1))
            shape_error("concat", "trailing extents of " + shape_str(p.shape()) + " do not match " +
                                      shape_str(shape));
        lead += p.dim(0);
    }
    shape[0] = lead;
    Tensor out(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + offset);
        offset += p.value().numel();
    }
    return make_result(std::move(out), parts, [](Node& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t count = n.inputs[k]->value.numel();
            if (wants(n, k)) {
                Tensor& g = grad_of(n, k);
                for (std::size_t i = 0; i < count; ++i) g[i] += (*n.grad)[off + i];
            }
            off += count;
        }
    });
}

Var slice(const Var& a, std::size_t begin, std::size_t count) {
    if (a.shape().empty()) shape_error("slice", "input must have rank >= 1");
    if (count == 0 || begin + count > a.dim(0))
        shape_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                 ") exceeds leading extent " + std::to_string(a.dim(0)));
    Shape shape = a.shape();
    const std::size_t row = a.value().numel() / shape[0];
    shape[0] = count;
    Tensor out(shape);
    const auto src = a.value().data().subspan(begin * row, count * row);
    std::copy(src.begin(), src.end(), out.data().begin());
    return make_result(std::move(out), {a}, [begin, row](Node& n) {
        Tensor& g = grad_of(n, 0);
        for (std::size_t i = 0; i < n.grad->numel(); ++i) g[begin * row + i] += (*n.grad)[i];
    });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeometry {
    std::size_t cin, h, w, cout, cin_g, cout_g, kh, kw, ho, wo;
    Conv2dOptions opt;
};

// Output range [lo, hi) along one axis for which the tap at offset
// `tap` = k*dilation lands inside [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out, std::size_t stride,
                                                std::size_t pad, std::size_t tap) {
    // index = o*stride + tap - pad must satisfy 0 <= index < in
    const long long s = static_cast<long long>(stride);
    const long long shift = static_cast<long long>(tap) - static_cast<long long>(pad);
    long long lo = 0;
    if (shift < 0) lo = (-shift + s - 1) / s;
    long long hi = (static_cast<long long>(in) - 1 - shift);
    hi = hi < 0 ? 0 : hi / s + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out));
    if (lo > hi) lo = hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

ConvGeometry conv_geometry(const Var& x, const Var& w, const Var& bias, const Conv2dOptions& opt) {
    require_rank("conv2d", "input", x, 3);
    require_rank("conv2d", "weight", w, 4);
    ConvGeometry g{};
    g.opt = opt;
    g.cin = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.cout = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    if (opt.groups == 0) shape_error("conv2d", "groups must be >= 1");
    if (opt.stride[0] == 0 || opt.stride[1] == 0 || opt.dilation[0] == 0 || opt.dilation[1] == 0)
        shape_error("conv2d", "stride and dilation must be >= 1");
    if (g.cin % opt.groups != 0)
        shape_error("conv2d", "input channels " + std::to_string(g.cin) + " not divisible by groups " +
                                  std::to_string(opt.groups));
    if (g.cout % opt.groups != 0)
        shape_error("conv2d", "output channels " + std::to_string(g.cout) + " not divisible by groups " +
                                  std::to_string(opt.groups));
    g.cin_g = g.cin / opt.groups;
    g.cout_g = g.cout / opt.groups;
    if (w.dim(1) != g.cin_g)
        shape_error("conv2d", "weight input-channel extent " + std::to_string(w.dim(1)) + " != input channels / groups " +
                                  std::to_string(g.cin_g));
    if (bias.valid() && bias.shape() != Shape{g.cout})
        shape_error("conv2d", "bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(g.cout) + "]");
    auto out_extent = [](const char* axis, std::size_t in, std::size_t pad, std::size_t dil, std::size_t k,
                         std::size_t stride) {
        const long long span = static_cast<long long>(in + 2 * pad) - static_cast<long long>(dil * (k - 1)) - 1;
        if (span < 0)
            shape_error("conv2d", std::string("output ") + axis + " would be < 1 (input " + std::to_string(in) +
                                      ", padding " + std::to_string(pad) + ", dilated kernel " +
                                      std::to_string(dil * (k - 1) + 1) + ")");
        return static_cast<std::size_t>(span) / stride + 1;
    };
    g.ho = out_extent("height", g.h, opt.padding[0], opt.dilation[0], g.kh, opt.stride[0]);
    g.wo = out_extent("width", g.w, opt.padding[1], opt.dilation[1], g.kw, opt.stride[1]);
    return g;
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dOptions& opt) {
    const ConvGeometry g = conv_geometry(x, w, bias, opt);
    Tensor out({g.cout, g.ho, g.wo}, 0.0);
    const auto xd = x.value().data();
    const auto wd = w.value().data();
    auto od = out.data();

    for (std::size_t co = 0; co < g.cout; ++co) {
        const std::size_t grp = co / g.cout_g;
        double* o_plane = od.data() + co * g.ho * g.wo;
        if (bias.valid()) std::fill(o_plane, o_plane + g.ho * g.wo, bias.value()[co]);
        for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
            const std::size_t ci = grp * g.cin_g + cl;
            const double* x_plane = xd.data() + ci * g.h * g.w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const auto [oy0, oy1] = valid_range(g.h, g.ho, opt.stride[0], opt.padding[0], ky * opt.dilation[0]);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = wd[((co * g.cin_g + cl) * g.kh + ky) * g.kw + kx];
                    const auto [ox0, ox1] =
                        valid_range(g.w, g.wo, opt.stride[1], opt.padding[1], kx * opt.dilation[1]);
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const std::size_t iy = oy * opt.stride[0] + ky * opt.dilation[0] - opt.padding[0];
                        const double* xr = x_plane + iy * g.w;
                        double* orow = o_plane + oy * g.wo;
                        if (opt.stride[1] == 1) {
                            const std::size_t shift = kx * opt.dilation[1] - opt.padding[1] + 0;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox + shift];
                        } else {
                            for (std::size_t ox = ox0; ox < ox1; ++ox)
                                orow[ox] += wv * xr[ox * opt.stride[1] + kx * opt.dilation[1] - opt.padding[1]];
                        }
                    }
                }
            }
        }
    }
    mac_counter() += g.cout * g.cin_g * g.kh * g.kw * g.ho * g.wo;

    std::vector<Var> inputs{x, w};
    if (bias.valid()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [g](Node& n) {
        const Conv2dOptions& opt = g.opt;
        const auto xd = n.inputs[0]->value.data();
        const auto wd = n.inputs[1]->value.data();
        const auto gd = n.grad->data();
        const bool want_x = wants(n, 0), want_w = wants(n, 1);
        double* gx = want_x ? grad_of(n, 0).data().data() : nullptr;
        double* gw = want_w ? grad_of(n, 1).data().data() : nullptr;
        if (n.inputs.size() > 2 && wants(n, 2)) {
            Tensor& gb = grad_of(n, 2);
            for (std::size_t co = 0; co < g.cout; ++co) {
                double s = 0.0;
                for (std::size_t i = 0; i < g.ho * g.wo; ++i) s += gd[co * g.ho * g.wo + i];
                gb[co] += s;
            }
        }
        if (!want_x && !want_w) return;
        for (std::size_t co = 0; co < g.cout; ++co) {
            const std::size_t grp = co / g.cout_g;
            const double* g_plane = gd.data() + co * g.ho * g.wo;
            for (std::size_t cl = 0; cl < g.cin_g; ++cl) {
                const std::size_t ci = grp * g.cin_g + cl;
                const double* x_plane = xd.data() + ci * g.h * g.w;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const auto [oy0, oy1] =
                        valid_range(g.h, g.ho, opt.stride[0], opt.padding[0], ky * opt.dilation[0]);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::size_t widx = ((co * g.cin_g + cl) * g.kh + ky) * g.kw + kx;
                        const double wv = wd[widx];
                        const auto [ox0, ox1] =
                            valid_range(g.w, g.wo, opt.stride[1], opt.padding[1], kx * opt.dilation[1]);
                        double acc = 0.0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const std::size_t iy = oy * opt.stride[0] + ky * opt.dilation[0] - opt.padding[0];
                            const double* grow = g_plane + oy * g.wo;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                const std::size_t ix = ox * opt.stride[1] + kx * opt.dilation[1] - opt.padding[1];
                                const std::size_t xi = iy * g.w + ix;
                                acc += grow[ox] * x_plane[xi];
                                if (gx) gx[ci * g.h * g.w + xi] += wv * grow[ox];
                            }
                        }
                        if (gw) gw[widx] += acc;
                    }
                }
            }
        }
    });
}

Var pointwise_conv1d(const Var& x, const Var& w, const Var& bias) {
    require_rank("pointwise_conv1d", "input", x, 2);
    require_rank("pointwise_conv1d", "weight", w, 3);
    const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0);
    if (w.dim(1) != cin)
        shape_error("pointwise_conv1d", "weight input-channel extent " + std::to_string(w.dim(1)) +
                                            " != input channels " + std::to_string(cin));
    if (w.dim(2) != 1) shape_error("pointwise_conv1d", "kernel width must be 1, got " + std::to_string(w.dim(2)));
    if (bias.valid() && bias.shape() != Shape{cout})
        shape_error("pointwise_conv1d", "bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(cout) + "]");
    Tensor out({cout, len}, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        const double b = bias.valid() ? bias.value()[co] : 0.0;
        for (std::size_t l = 0; l < len; ++l) out[co * len + l] = b;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double wv = w.value()[co * cin + ci];
            for (std::size_t l = 0; l < len; ++l) out[co * len + l] += wv * x.value()[ci * len + l];
        }
    }
    mac_counter() += cout * cin * len;
    std::vector<Var> inputs{x, w};
    if (bias.valid()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [cin, cout, len](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& wv = n.inputs[1]->value;
        const Tensor& go = *n.grad;
        if (wants(n, 0)) {
            Tensor& gx = grad_of(n, 0);
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t l = 0; l < len; ++l) gx[ci * len + l] += wv[co * cin + ci] * go[co * len + l];
        }
        if (wants(n, 1)) {
            Tensor& gw = grad_of(n, 1);
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    double s = 0.0;
                    for (std::size_t l = 0; l < len; ++l) s += xv[ci * len + l] * go[co * len + l];
                    gw[co * cin + ci] += s;
                }
        }
        if (n.inputs.size() > 2 && wants(n, 2)) {
            Tensor& gb = grad_of(n, 2);
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t l = 0; l < len; ++l) gb[co] += go[co * len + l];
        }
    });
}

Var subpixel_shuffle(const Var& x, std::size_t r) {
    require_rank("subpixel_shuffle", "input", x, 3);
    if (r == 0 || x.dim(0) % r != 0)
        shape_error("subpixel_shuffle", "channel count " + std::to_string(x.dim(0)) + " not divisible by factor " +
                                            std::to_string(r));
    const std::size_t c = x.dim(0) / r, t = x.dim(1), f = x.dim(2);
    // out index of in[(j*c + ch), ti, fi] -> out[ch, ti, fi*r + j]
    auto out_index = [=](std::size_t j, std::size_t ch, std::size_t ti, std::size_t fi) {
        return (ch * t + ti) * (f * r) + fi * r + j;
    };
    Tensor out({c, t, f * r});
    std::size_t src = 0;
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t fi = 0; fi < f; ++fi, ++src) out[out_index(j, ch, ti, fi)] = x.value()[src];
    return make_result(std::move(out), {x}, [=](Node& n) {
        Tensor& g = grad_of(n, 0);
        std::size_t s = 0;
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t ti = 0; ti < t; ++ti)
                    for (std::size_t fi = 0; fi < f; ++fi, ++s) g[s] += (*n.grad)[out_index(j, ch, ti, fi)];
    });
}

Tensor subpixel_unshuffle(const Tensor& x, std::size_t r) {
    if (x.rank() != 3 || r == 0 || x.dim(2) % r != 0)
        throw std::invalid_argument("subpixel_unshuffle: width " + std::to_string(x.rank() == 3 ? x.dim(2) : 0) +
                                    " not divisible by factor " + std::to_string(r));
    const std::size_t c = x.dim(0), t = x.dim(1), f = x.dim(2) / r;
    Tensor out({c * r, t, f});
    std::size_t dst = 0;
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t fi = 0; fi < f; ++fi, ++dst) out[dst] = x[(ch * t + ti) * (f * r) + fi * r + j];
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and activations

Var layer_norm(const Var& x, const std::vector<std::size_t>& axes, const Var& gamma, const Var& beta, double eps) {
    const Shape& shape = x.shape();
    if (axes.empty()) shape_error("layer_norm", "no normalized axes");
    if (!(eps >= 0.0)) shape_error("layer_norm", "eps must be non-negative");
    std::vector<bool> normed(shape.size(), false);
    Shape param_shape;
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= shape.size() || (i > 0 && axes[i] <= axes[i - 1]))
            shape_error("layer_norm", "axes must be ascending and below rank " + std::to_string(shape.size()));
        normed[axes[i]] = true;
        param_shape.push_back(shape[axes[i]]);
    }
    if (gamma.shape() != param_shape || beta.shape() != param_shape)
        shape_error("layer_norm", "gamma/beta must have shape " + shape_str(param_shape) + ", got " +
                                      shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));

    // Map every flat index to (group, position-within-normalized-axes).
    const std::size_t total = x.value().numel();
    const std::size_t group_size = shape_numel(param_shape);
    const std::size_t groups = total / group_size;
    std::vector<std::size_t> group_of(total), inner_of(total);
    {
        std::vector<std::size_t> idx(shape.size(), 0);
        for (std::size_t flat = 0; flat < total; ++flat) {
            std::size_t gsel = 0, isel = 0;
            for (std::size_t a = 0; a < shape.size(); ++a) {
                if (normed[a])
                    isel = isel * shape[a] + idx[a];
                else
                    gsel = gsel * shape[a] + idx[a];
            }
            group_of[flat] = gsel;
            inner_of[flat] = isel;
            for (std::size_t a = shape.size(); a-- > 0;) {
                if (++idx[a] < shape[a]) break;
                idx[a] = 0;
            }
        }
    }

    std::vector<double> mu(groups, 0.0), inv_std(groups, 0.0);
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < total; ++i) mu[group_of[i]] += xv[i];
    for (double& m : mu) m /= static_cast<double>(group_size);
    std::vector<double> var(groups, 0.0);
    for (std::size_t i = 0; i < total; ++i) {
        const double d = xv[i] - mu[group_of[i]];
        var[group_of[i]] += d * d;
    }
    for (std::size_t gi = 0; gi < groups; ++gi)
        inv_std[gi] = 1.0 / std::sqrt(var[gi] / static_cast<double>(group_size) + eps);

    Tensor xhat(shape), out(shape);
    for (std::size_t i = 0; i < total; ++i) {
        xhat[i] = (xv[i] - mu[group_of[i]]) * inv_std[group_of[i]];
        out[i] = gamma.value()[inner_of[i]] * xhat[i] + beta.value()[inner_of[i]];
    }

    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), group_of = std::move(group_of),
                        inner_of = std::move(inner_of), groups, group_size](Node& n) {
                           const Tensor& go = *n.grad;
                           const Tensor& gamma_v = n.inputs[1]->value;
                           const std::size_t total = go.numel();
                           if (wants(n, 1)) {
                               Tensor& gg = grad_of(n, 1);
                               for (std::size_t i = 0; i < total; ++i) gg[inner_of[i]] += go[i] * xhat[i];
                           }
                           if (wants(n, 2)) {
                               Tensor& gb = grad_of(n, 2);
                               for (std::size_t i = 0; i < total; ++i) gb[inner_of[i]] += go[i];
                           }
                           if (!wants(n, 0)) return;
                           std::vector<double> sum_d(groups, 0.0), sum_dx(groups, 0.0);
                           for (std::size_t i = 0; i < total; ++i) {
                               const double d = go[i] * gamma_v[inner_of[i]];
                               sum_d[group_of[i]] += d;
                               sum_dx[group_of[i]] += d * xhat[i];
                           }
                           Tensor& gx = grad_of(n, 0);
                           const double count = static_cast<double>(group_size);
                           for (std::size_t i = 0; i < total; ++i) {
                               const std::size_t gi = group_of[i];
                               const double d = go[i] * gamma_v[inner_of[i]];
                               gx[i] += inv_std[gi] * (d - sum_d[gi] / count - xhat[i] * sum_dx[gi] / count);
                           }
                       });
}

Var activation(const Var& x, Activation kind) {
    Tensor out = x.value();
    for (double& v : out.data()) {
        switch (kind) {
        case Activation::relu: v = v > 0.0 ? v : 0.0; break;
        case Activation::sigmoid: v = sigmoid_scalar(v); break;
        case Activation::tanh: v = std::tanh(v); break;
        }
    }
    // The adjoint of each kind can be written in terms of the output.
    return make_result(out, {x}, [kind, y = out](Node& n) {
        Tensor& g = grad_of(n, 0);
        const Tensor& go = *n.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double d = 0.0;
            switch (kind) {
            case Activation::relu: d = y[i] > 0.0 ? 1.0 : 0.0; break;
            case Activation::sigmoid: d = y[i] * (1.0 - y[i]); break;
            case Activation::tanh: d = 1.0 - y[i] * y[i]; break;
            }
            g[i] += go[i] * d;
        }
    });
}

Var prelu(const Var& x, const Var& slope) {
    if (x.shape().empty()) shape_error("prelu", "input must have rank >= 1");
    const std::size_t channels = x.dim(0);
    if (slope.shape().size() != 1 || (slope.dim(0) != channels && slope.dim(0) != 1))
        shape_error("prelu", "slope shape " + shape_str(slope.shape()) + " does not match channel extent " +
                                 std::to_string(channels));
    const std::size_t per = x.value().numel() / channels;
    const bool shared = slope.dim(0) == 1;
    Tensor out = x.value();
    for (std::size_t c = 0; c < channels; ++c) {
        const double a = slope.value()[shared ? 0 : c];
        for (std::size_t i = c * per; i < (c + 1) * per; ++i)
            if (out[i] < 0.0) out[i] *= a;
    }
    return make_result(std::move(out), {x, slope}, [channels, per, shared](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& av = n.inputs[1]->value;
        const Tensor& go = *n.grad;
        Tensor* gx = wants(n, 0) ? &grad_of(n, 0) : nullptr;
        Tensor* ga = wants(n, 1) ? &grad_of(n, 1) : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t ai = shared ? 0 : c;
            for (std::size_t i = c * per; i < (c + 1) * per; ++i) {
                if (xv[i] >= 0.0) {
                    if (gx) (*gx)[i] += go[i];
                } else {
                    if (gx) (*gx)[i] += go[i] * av[ai];
                    if (ga) (*ga)[ai] += go[i] * xv[i];
                }
            }
        }
    });
}

Var softmax(const Var& x, std::size_t axis) {
    if (axis >= x.shape().size())
        shape_error("softmax", "axis " + std::to_string(axis) + " out of range for shape " + shape_str(x.shape()));
    const AxisView v = axis_view(x.shape(), axis);
    Tensor out = x.value();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double peak = out[base];
            for (std::size_t k = 1; k < v.extent; ++k) peak = std::max(peak, out[base + k * v.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < v.extent; ++k) {
                double& e = out[base + k * v.inner];
                e = std::exp(e - peak);
                total += e;
            }
            for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= total;
        }
    return make_result(out, {x}, [v, y = out](Node& n) {
        Tensor& g = grad_of(n, 0);
        const Tensor& go = *n.grad;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t in = 0; in < v.inner; ++in) {
                const std::size_t base = o * v.extent * v.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < v.extent; ++k) dot += go[base + k * v.inner] * y[base + k * v.inner];
                for (std::size_t k = 0; k < v.extent; ++k) {
                    const std::size_t i = base + k * v.inner;
                    g[i] += y[i] * (go[i] - dot);
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and pooling

Var matmul(const Var& a, const Var& b) {
    require_rank("matmul", "left operand", a, 2);
    require_rank("matmul", "right operand", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    if (b.dim(0) != k)
        shape_error("matmul", "inner extents differ: " + std::to_string(k) + " vs " + std::to_string(b.dim(0)));
    Tensor out({m, nn}, 0.0);
    const auto av = a.value().data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            for (std::size_t j = 0; j < nn; ++j) out[i * nn + j] += s * bv[p * nn + j];
        }
    mac_counter() += m * k * nn;
    return make_result(std::move(out), {a, b}, [m, k, nn](Node& n) {
        const Tensor& go = *n.grad;
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (wants(n, 0)) {
            Tensor& ga = grad_of(n, 0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < nn; ++j) s += go[i * nn + j] * bv[p * nn + j];
                    ga[i * k + p] += s;
                }
        }
        if (wants(n, 1)) {
            Tensor& gb = grad_of(n, 1);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double s = av[i * k + p];
                    for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += s * go[i * nn + j];
                }
        }
    });
}

Var transpose(const Var& a) {
    require_rank("transpose", "input", a, 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
    return make_result(std::move(out), {a}, [r, c](Node& n) {
        Tensor& g = grad_of(n, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (*n.grad)[j * r + i];
    });
}

Var global_pool(const Var& x, std::size_t kept_axis) {
    if (kept_axis >= x.shape().size())
        shape_error("global_pool", "kept axis " + std::to_string(kept_axis) + " out of range for shape " +
                                       shape_str(x.shape()));
    const AxisView v = axis_view(x.shape(), kept_axis);
    const double count = static_cast<double>(v.outer * v.inner);
    Tensor out({v.extent}, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t k = 0; k < v.extent; ++k) {
            const std::size_t base = (o * v.extent + k) * v.inner;
            double s = 0.0;
            for (std::size_t in = 0; in < v.inner; ++in) s += x.value()[base + in];
            out[k] += s;
        }
    for (double& val : out.data()) val /= count;
    return make_result(std::move(out), {x}, [v, count](Node& n) {
        Tensor& g = grad_of(n, 0);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t k = 0; k < v.extent; ++k) {
                const double up = (*n.grad)[k] / count;
                const std::size_t base = (o * v.extent + k) * v.inner;
                for (std::size_t in = 0; in < v.inner; ++in) g[base + in] += up;
            }
    });
}

Var scale_channels(const Var& x, const Var& gains) {
    if (x.shape().empty() || gains.shape() != Shape{x.dim(0)})
        shape_error("scale_channels", "gains shape " + shape_str(gains.shape()) + " does not match channel extent of " +
                                          shape_str(x.shape()));
    const std::size_t channels = x.dim(0), per = x.value().numel() / channels;
    Tensor out = x.value();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = c * per; i < (c + 1) * per; ++i) out[i] *= gains.value()[c];
    return make_result(std::move(out), {x, gains}, [channels, per](Node& n) {
        const Tensor& go = *n.grad;
        const Tensor& xv = n.inputs[0]->value;
        const Tensor& gv = n.inputs[1]->value;
        if (wants(n, 0)) {
            Tensor& gx = grad_of(n, 0);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = c * per; i < (c + 1) * per; ++i) gx[i] += go[i] * gv[c];
        }
        if (wants(n, 1)) {
            Tensor& gg = grad_of(n, 1);
            for (std::size_t c = 0; c < channels; ++c) {
                double s = 0.0;
                for (std::size_t i = c * per; i < (c + 1) * per; ++i) s += go[i] * xv[i];
                gg[c] += s;
            }
        }
    });
}

Var axis_mix(const Var& v, const Var& m, std::size_t axis) {
    require_rank("axis_mix", "input", v, 3);
    require_rank("axis_mix", "map", m, 2);
    if (axis > 2) shape_error("axis_mix", "axis must be 0, 1 or 2");
    const std::size_t len = v.dim(axis);
    if (m.dim(0) != len || m.dim(1) != len)
        shape_error("axis_mix", "map shape " + shape_str(m.shape()) + " does not match axis extent " +
                                    std::to_string(len));
    const AxisView av = axis_view(v.shape(), axis);
    const auto vd = v.value().data();
    const auto md = m.value().data();
    Tensor out(v.shape(), 0.0);
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::size_t i = 0; i < len; ++i) {
            double* orow = out.data().data() + (o * len + i) * av.inner;
            for (std::size_t j = 0; j < len; ++j) {
                const double w = md[i * len + j];
                const double* vrow = vd.data() + (o * len + j) * av.inner;
                for (std::size_t in = 0; in < av.inner; ++in) orow[in] += w * vrow[in];
            }
        }
    mac_counter() += av.outer * len * len * av.inner;
    return make_result(std::move(out), {v, m}, [av, len](Node& n) {
        const auto go = n.grad->data();
        const auto vd = n.inputs[0]->value.data();
        const auto md = n.inputs[1]->value.data();
        double* gv = wants(n, 0) ? grad_of(n, 0).data().data() : nullptr;
        double* gm = wants(n, 1) ? grad_of(n, 1).data().data() : nullptr;
        for (std::size_t o = 0; o < av.outer; ++o)
            for (std::size_t i = 0; i < len; ++i) {
                const double* grow = go.data() + (o * len + i) * av.inner;
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t vbase = (o * len + j) * av.inner;
                    const double w = md[i * len + j];
                    double acc = 0.0;
                    for (std::size_t in = 0; in < av.inner; ++in) {
                        if (gv) gv[vbase + in] += w * grow[in];
                        acc += grow[in] * vd[vbase + in];
                    }
                    if (gm) gm[i * len + j] += acc;
                }
            }
    });
}

// ---------------------------------------------------------------------------
// GRU

Var gru_layer(const Var& x, const Var& h0, const GruWeights& wts) {
    const bool batched = x.shape().size() == 3;
    if (!batched && x.shape().size() != 2)
        shape_error("gru_layer", "input must be [T,D] or [B,T,D], got " + shape_str(x.shape()));
    const std::size_t batch = batched ? x.dim(0) : 1;
    const std::size_t steps = x.dim(batched ? 1 : 0);
    const std::size_t in_dim = x.dim(batched ? 2 : 1);
    if (h0.shape().size() != 1) shape_error("gru_layer", "h0 must be 1-D, got " + shape_str(h0.shape()));
    const std::size_t hid = h0.dim(0);
    if (wts.w_ih.shape() != Shape{3 * hid, in_dim})
        shape_error("gru_layer", "w_ih shape " + shape_str(wts.w_ih.shape()) + " != [" + std::to_string(3 * hid) +
                                     "," + std::to_string(in_dim) + "]");
    if (wts.w_hh.shape() != Shape{3 * hid, hid})
        shape_error("gru_layer", "w_hh shape " + shape_str(wts.w_hh.shape()) + " != [" + std::to_string(3 * hid) +
                                     "," + std::to_string(hid) + "]");
    if (wts.b_ih.shape() != Shape{3 * hid} || wts.b_hh.shape() != Shape{3 * hid})
        shape_error("gru_layer", "biases must have shape [" + std::to_string(3 * hid) + "]");

    const auto xd = x.value().data();
    const auto wih = wts.w_ih.value().data();
    const auto whh = wts.w_hh.value().data();
    const auto bih = wts.b_ih.value().data();
    const auto bhh = wts.b_hh.value().data();

    // Per (batch, step) caches: r, z, n, previous h.
    const std::size_t cells = batch * steps;
    std::vector<double> rs(cells * hid), zs(cells * hid), ns(cells * hid), hprev(cells * hid);
    Tensor out(batched ? Shape{batch, steps, hid} : Shape{steps, hid});
    std::vector<double> h(hid), gi(3 * hid), rh(hid), ghn(hid);
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy(h0.value().data().begin(), h0.value().data().end(), h.begin());
        for (std::size_t t = 0; t < steps; ++t) {
            const std::size_t cell = b * steps + t;
            const double* xt = xd.data() + cell * in_dim;
            for (std::size_t row = 0; row < 3 * hid; ++row) {
                double s = bih[row];
                for (std::size_t d = 0; d < in_dim; ++d) s += wih[row * in_dim + d] * xt[d];
                gi[row] = s;
            }
            double* r = rs.data() + cell * hid;
            double* z = zs.data() + cell * hid;
            double* nn = ns.data() + cell * hid;
            std::copy(h.begin(), h.end(), hprev.begin() + static_cast<std::ptrdiff_t>(cell * hid));
            for (std::size_t j = 0; j < hid; ++j) {
                double sr = gi[j] + bhh[j], sz = gi[hid + j] + bhh[hid + j];
                for (std::size_t k = 0; k < hid; ++k) {
                    sr += whh[j * hid + k] * h[k];
                    sz += whh[(hid + j) * hid + k] * h[k];
                }
                r[j] = sigmoid_scalar(sr);
                z[j] = sigmoid_scalar(sz);
            }
            for (std::size_t k = 0; k < hid; ++k) rh[k] = r[k] * h[k];
            for (std::size_t j = 0; j < hid; ++j) {
                double s = gi[2 * hid + j] + bhh[2 * hid + j];
                for (std::size_t k = 0; k < hid; ++k) s += whh[(2 * hid + j) * hid + k] * rh[k];
                nn[j] = std::tanh(s);
            }
            for (std::size_t j = 0; j < hid; ++j) h[j] = (1.0 - z[j]) * nn[j] + z[j] * h[j];
            std::copy(h.begin(), h.end(), out.data().begin() + static_cast<std::ptrdiff_t>(cell * hid));
        }
    }
    mac_counter() += cells * 3 * hid * (in_dim + hid);

    return make_result(
        std::move(out), {x, h0, wts.w_ih, wts.w_hh, wts.b_ih, wts.b_hh},
        [batch, steps, in_dim, hid, rs = std::move(rs), zs = std::move(zs), ns = std::move(ns),
         hprev = std::move(hprev)](Node& n) {
            const auto xd = n.inputs[0]->value.data();
            const auto wih = n.inputs[2]->value.data();
            const auto whh = n.inputs[3]->value.data();
            const auto go = n.grad->data();
            double* gx = wants(n, 0) ? grad_of(n, 0).data().data() : nullptr;
            double* gh0 = wants(n, 1) ? grad_of(n, 1).data().data() : nullptr;
            double* gwih = wants(n, 2) ? grad_of(n, 2).data().data() : nullptr;
            double* gwhh = wants(n, 3) ? grad_of(n, 3).data().data() : nullptr;
            double* gbih = wants(n, 4) ? grad_of(n, 4).data().data() : nullptr;
            double* gbhh = wants(n, 5) ? grad_of(n, 5).data().data() : nullptr;

            std::vector<double> dh(hid), da(3 * hid), drh(hid), dnext(hid);
            for (std::size_t b = 0; b < batch; ++b) {
                std::fill(dh.begin(), dh.end(), 0.0);
                for (std::size_t t = steps; t-- > 0;) {
                    const std::size_t cell = b * steps + t;
                    const double* r = rs.data() + cell * hid;
                    const double* z = zs.data() + cell * hid;
                    const double* nn = ns.data() + cell * hid;
                    const double* hp = hprev.data() + cell * hid;
                    for (std::size_t j = 0; j < hid; ++j) dh[j] += go[cell * hid + j];

                    // da layout: [reset | update | candidate] pre-activation adjoints
                    for (std::size_t j = 0; j < hid; ++j) {
                        dnext[j] = dh[j] * z[j];
                        const double dn = dh[j] * (1.0 - z[j]);
                        const double dz = dh[j] * (hp[j] - nn[j]);
                        da[2 * hid + j] = dn * (1.0 - nn[j] * nn[j]);
                        da[hid + j] = dz * z[j] * (1.0 - z[j]);
                    }
                    std::fill(drh.begin(), drh.end(), 0.0);
                    for (std::size_t j = 0; j < hid; ++j) {
                        const double a = da[2 * hid + j];
                        for (std::size_t k = 0; k < hid; ++k) drh[k] += whh[(2 * hid + j) * hid + k] * a;
                    }
                    for (std::size_t k = 0; k < hid; ++k) {
                        const double dr = drh[k] * hp[k];
                        dnext[k] += drh[k] * r[k];
                        da[k] = dr * r[k] * (1.0 - r[k]);
                    }
                    // Recurrent contributions of the reset and update gates.
                    for (std::size_t j = 0; j < 2 * hid; ++j) {
                        const double a = da[j];
                        for (std::size_t k = 0; k < hid; ++k) dnext[k] += whh[j * hid + k] * a;
                    }
                    const double* xt = xd.data() + cell * in_dim;
                    for (std::size_t row = 0; row < 3 * hid; ++row) {
                        const double a = da[row];
                        if (gbih) gbih[row] += a;
                        if (gbhh) gbhh[row] += a;
                        if (gwih)
                            for (std::size_t d = 0; d < in_dim; ++d) gwih[row * in_dim + d] += a * xt[d];
                        if (gx)
                            for (std::size_t d = 0; d < in_dim; ++d) gx[cell * in_dim + d] += wih[row * in_dim + d] * a;
                        if (gwhh) {
                            const bool cand = row >= 2 * hid;
                            for (std::size_t k = 0; k < hid; ++k)
                                gwhh[row * hid + k] += a * (cand ? r[k] * hp[k] : hp[k]);
                        }
                    }
                    std::swap(dh, dnext);
                }
                if (gh0)
                    for (std::size_t j = 0; j < hid; ++j) gh0[j] += dh[j];
            }
        });
}

} // namespace pcnn::ops
