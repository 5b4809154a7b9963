#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pcnn/ops.hpp"
#include "test_support.hpp"

using namespace pcnn;
using pcnn::testing::gradient_error;
using pcnn::testing::probe;
using pcnn::testing::random_tensor;

namespace {

// Direct cross-correlation with explicit zero padding; single group.
Tensor conv_oracle(const Tensor& x, const Tensor& w, std::size_t dil, std::size_t pad) {
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
    const std::size_t ho = h + 2 * pad - dil * (k - 1), wo = wd + 2 * pad - dil * (k - 1);
    Tensor out({cout, ho, wo}, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double s = 0.0;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = static_cast<long>(oy + ky * dil) - static_cast<long>(pad);
                            const long ix = static_cast<long>(ox + kx * dil) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                            s += w[((co * cin + ci) * k + ky) * k + kx] * x[(ci * h + iy) * wd + ix];
                        }
                out[(co * ho + oy) * wo + ox] = s;
            }
    return out;
}

// Input positions with nonzero gradient of one output element.
std::vector<std::size_t> support_of_output(const Tensor& x, const Tensor& w, const ops::Conv2dOptions& opt,
                                           std::size_t out_index) {
    Tape tape;
    const Var xv = tape.leaf("x", x);
    const Var out = ops::conv2d(xv, Var(w), Var{}, opt);
    Tensor sel(out.shape(), 0.0);
    sel[out_index] = 1.0;
    const Gradients g = tape.backward(ops::sum(ops::mul(out, Var(sel))));
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < g.at("x").numel(); ++i)
        if (g.at("x")[i] != 0.0) support.push_back(i);
    return support;
}

} // namespace

TEST_SUITE("conv2d") {
    TEST_CASE("1x1 identity kernel returns the input") {
        std::mt19937_64 rng(1);
        const Tensor x = random_tensor({1, 4, 5}, rng);
        const Var out = ops::conv2d(Var(x), Var(Tensor({1, 1, 1, 1}, 1.0)), Var(Tensor({1}, 0.0)));
        CHECK(out.value() == x);
    }

    TEST_CASE("dilated 3x3 on all-ones 9x9 sums nine taps at the centre") {
        const Tensor x({1, 9, 9}, 1.0), w({1, 1, 3, 3}, 1.0);
        ops::Conv2dOptions opt;
        opt.dilation = {4, 4};
        opt.padding = {4, 4};
        const Var out = ops::conv2d(Var(x), Var(w), Var{}, opt);
        const Tensor expected = conv_oracle(x, w, 4, 4);
        CHECK(out.value() == expected);
        CHECK(out.value()[4 * 9 + 4] == doctest::Approx(9.0));
        CHECK(expected[4 * 9 + 4] == 9.0);
    }

    TEST_CASE("kernel 3 dilation 4 reads offsets {0,4,8} per axis") {
        std::mt19937_64 rng(2);
        const Tensor x = random_tensor({1, 9, 9}, rng), w({1, 1, 3, 3}, 1.0);
        ops::Conv2dOptions opt;
        opt.dilation = {4, 4};
        // No padding: the single output reads the corners of a 9x9 span.
        const auto unpadded = support_of_output(x, w, opt, 0);
        // Padding 4: the centre output reads the same grid.
        opt.padding = {4, 4};
        const auto padded = support_of_output(x, w, opt, 4 * 9 + 4);
        std::vector<std::size_t> expected;
        for (std::size_t r : {0, 4, 8})
            for (std::size_t c : {0, 4, 8}) expected.push_back(r * 9 + c);
        CHECK(unpadded == expected);
        CHECK(padded == expected);
    }

    TEST_CASE("matches the direct-summation oracle on random inputs") {
        std::mt19937_64 rng(3);
        for (std::size_t dil : {1, 2, 3}) {
            const Tensor x = random_tensor({3, 7, 8}, rng), w = random_tensor({2, 3, 3, 3}, rng);
            ops::Conv2dOptions opt;
            opt.dilation = {dil, dil};
            opt.padding = {dil, dil};
            CHECK(max_abs_diff(ops::conv2d(Var(x), Var(w), Var{}, opt).value(), conv_oracle(x, w, dil, dil)) < 1e-12);
        }
    }

    TEST_CASE("depthwise equals independent per-channel convolutions") {
        std::mt19937_64 rng(4);
        const Tensor x = random_tensor({4, 6, 7}, rng), w = random_tensor({4, 1, 3, 3}, rng);
        ops::Conv2dOptions opt;
        opt.padding = {1, 1};
        opt.groups = 4;
        const Tensor out = ops::conv2d(Var(x), Var(w), Var{}, opt).value();
        for (std::size_t c = 0; c < 4; ++c) {
            Tensor xc({1, 6, 7}), wc({1, 1, 3, 3});
            std::copy_n(x.data().begin() + c * 42, 42, xc.data().begin());
            std::copy_n(w.data().begin() + c * 9, 9, wc.data().begin());
            const Tensor ref = conv_oracle(xc, wc, 1, 1);
            for (std::size_t i = 0; i < 42; ++i) CHECK(out[c * 42 + i] == doctest::Approx(ref[i]).epsilon(1e-14));
        }
    }

    TEST_CASE("stride halves the width") {
        const Tensor x({2, 3, 512}, 1.0), w({2, 2, 1, 3}, 0.1);
        ops::Conv2dOptions opt;
        opt.stride = {1, 2};
        opt.padding = {0, 1};
        CHECK(ops::conv2d(Var(x), Var(w), Var{}, opt).shape() == Shape{2, 3, 256});
    }

    TEST_CASE("shape errors name the offending dimension") {
        const Var x(Tensor({3, 4, 4}, 1.0));
        ops::Conv2dOptions opt;
        opt.groups = 2;
        CHECK_THROWS_WITH_AS(ops::conv2d(x, Var(Tensor({2, 1, 1, 1})), Var{}, opt),
                             doctest::Contains("input channels 3 not divisible by groups 2"), std::invalid_argument);
        CHECK_THROWS_WITH_AS(ops::conv2d(x, Var(Tensor({2, 2, 1, 1})), Var{}),
                             doctest::Contains("weight input-channel extent"), std::invalid_argument);
        CHECK_THROWS_WITH_AS(ops::conv2d(x, Var(Tensor({1, 3, 5, 5})), Var{}), doctest::Contains("output height"),
                             std::invalid_argument);
    }

    TEST_CASE("weight gradient of sum(conv) is the correlation of x with ones") {
        std::mt19937_64 rng(5);
        const Tensor x = random_tensor({2, 5, 6}, rng);
        Tape tape;
        const Var w = tape.leaf("w", random_tensor({3, 2, 3, 3}, rng));
        ops::Conv2dOptions opt;
        opt.dilation = {1, 2};
        opt.padding = {1, 2};
        const Gradients g = tape.backward(ops::sum(ops::conv2d(Var(x), w, Var{}, opt)));
        // d/dw[co,ci,ky,kx] = sum over outputs of the input under that tap.
        const Tensor ones({1, 2, 3, 3}, 1.0);
        for (std::size_t ci = 0; ci < 2; ++ci)
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    double s = 0.0;
                    for (long oy = 0; oy < 5; ++oy)
                        for (long ox = 0; ox < 6; ++ox) {
                            const long iy = oy + static_cast<long>(ky) - 1, ix = ox + 2 * static_cast<long>(kx) - 2;
                            if (iy >= 0 && iy < 5 && ix >= 0 && ix < 6) s += x[(ci * 5 + iy) * 6 + ix];
                        }
                    for (std::size_t co = 0; co < 3; ++co)
                        CHECK(g.at("w")[((co * 2 + ci) * 3 + ky) * 3 + kx] == doctest::Approx(s).epsilon(1e-13));
                }
    }
}

TEST_SUITE("pointwise_conv1d") {
    TEST_CASE("identity and channel sum") {
        const Tensor x = Tensor({1, 3}, {1, -2, 5});
        CHECK(ops::pointwise_conv1d(Var(x), Var(Tensor({1, 1, 1}, 1.0)), Var(Tensor({1}, 0.0))).value() == x);
        const Tensor x2({2, 1}, {3, 4});
        CHECK(ops::pointwise_conv1d(Var(x2), Var(Tensor({1, 2, 1}, 1.0)), Var{}).value()[0] == 7.0);
    }

    TEST_CASE("equals a 1x1 conv2d on a height-1 reshape") {
        std::mt19937_64 rng(6);
        const Tensor x = random_tensor({3, 10}, rng), w = random_tensor({4, 3, 1}, rng), b = random_tensor({4}, rng);
        const Tensor a = ops::pointwise_conv1d(Var(x), Var(w), Var(b)).value();
        const Tensor c =
            ops::conv2d(Var(x.reshaped({3, 1, 10})), Var(w.reshaped({4, 3, 1, 1})), Var(b)).value().reshaped({4, 10});
        CHECK(max_abs_diff(a, c) < 1e-14);
    }

    TEST_CASE("rejects mismatched channels") {
        CHECK_THROWS_AS(ops::pointwise_conv1d(Var(Tensor({2, 3})), Var(Tensor({1, 3, 1})), Var{}), std::invalid_argument);
    }
}

TEST_SUITE("subpixel_shuffle") {
    TEST_CASE("factor 1 is the identity") {
        std::mt19937_64 rng(7);
        const Tensor x = random_tensor({3, 2, 4}, rng);
        CHECK(ops::subpixel_shuffle(Var(x), 1).value() == x);
    }

    TEST_CASE("channel blocks interleave along the width") {
        const Tensor x({2, 1, 2}, {10, 11, 20, 21}); // A = [a0,a1], B = [b0,b1]
        CHECK(ops::subpixel_shuffle(Var(x), 2).value().values() == std::vector<double>{10, 20, 11, 21});
    }

    TEST_CASE("round trip is exact and preserves the sum") {
        std::mt19937_64 rng(8);
        for (std::size_t r : {2, 3, 4}) {
            const Tensor x = random_tensor({2 * r, 3, 5}, rng);
            const Tensor y = ops::subpixel_shuffle(Var(x), r).value();
            CHECK(y.shape() == Shape{2, 3, 5 * r});
            CHECK(ops::subpixel_unshuffle(y, r) == x);
            std::vector<double> a = x.values(), b = y.values();
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            CHECK(a == b);
        }
    }

    TEST_CASE("indivisible channel count is rejected") {
        CHECK_THROWS_AS(ops::subpixel_shuffle(Var(Tensor({3, 1, 2})), 2), std::invalid_argument);
    }
}

TEST_SUITE("layer_norm") {
    TEST_CASE("constant input normalizes to zero") {
        const Var out = ops::layer_norm(Var(Tensor({4, 3}, 2.5)), {0}, Var(Tensor({4}, 1.0)), Var(Tensor({4}, 0.0)), 1e-5);
        for (double v : out.value().data()) CHECK(v == 0.0);
    }

    TEST_CASE("two-point example with eps 0") {
        const Var out = ops::layer_norm(Var(Tensor::from({1, 3})), {0}, Var(Tensor({2}, 1.0)), Var(Tensor({2}, 0.0)), 0.0);
        CHECK(out.value().values() == std::vector<double>{-1.0, 1.0});
    }

    TEST_CASE("per-group moments over random inputs") {
        std::mt19937_64 rng(9);
        const Tensor x = random_tensor({5, 3, 7}, rng, -3.0, 4.0);
        for (const std::vector<std::size_t>& axes : {std::vector<std::size_t>{0}, {0, 2}, {2}}) {
            Shape ps;
            for (auto a : axes) ps.push_back(x.dim(a));
            const Tensor y =
                ops::layer_norm(Var(x), axes, Var(Tensor(ps, 1.0)), Var(Tensor(ps, 0.0)), 1e-14).value();
            // group over the non-normalized axes
            std::map<std::size_t, std::vector<double>> groups;
            for (std::size_t c = 0; c < 5; ++c)
                for (std::size_t t = 0; t < 3; ++t)
                    for (std::size_t f = 0; f < 7; ++f) {
                        std::size_t key = 0;
                        const std::size_t idx[3] = {c, t, f};
                        for (std::size_t a = 0; a < 3; ++a)
                            if (std::find(axes.begin(), axes.end(), a) == axes.end()) key = key * 10 + idx[a];
                        groups[key].push_back(y[(c * 3 + t) * 7 + f]);
                    }
            for (const auto& [key, vals] : groups) {
                const double mu = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mu) * (v - mu);
                var /= static_cast<double>(vals.size());
                CHECK(std::abs(mu) <= 1e-12);
                CHECK(std::abs(var - 1.0) <= 1e-8);
            }
        }
    }
}

TEST_SUITE("activations") {
    TEST_CASE("spot values") {
        CHECK(ops::relu(Var(Tensor::scalar(-2))).value().item() == 0.0);
        CHECK(ops::sigmoid(Var(Tensor::scalar(0))).value().item() == 0.5);
        CHECK(ops::tanh(Var(Tensor::scalar(0))).value().item() == 0.0);
        CHECK(ops::sigmoid(Var(Tensor::scalar(-1000))).value().item() == 0.0);
        CHECK(ops::sigmoid(Var(Tensor::scalar(1000))).value().item() == 1.0);
    }

    TEST_CASE("monotone on a grid") {
        Tensor grid({201});
        for (std::size_t i = 0; i < 201; ++i) grid[i] = -10.0 + 0.1 * static_cast<double>(i);
        for (auto kind : {ops::Activation::relu, ops::Activation::sigmoid, ops::Activation::tanh}) {
            const Tensor y = ops::activation(Var(grid), kind).value();
            for (std::size_t i = 1; i < 201; ++i) CHECK(y[i] >= y[i - 1]);
        }
    }

    TEST_CASE("prelu") {
        const Tensor x({2, 1}, {3.0, -1.0});
        const Tensor y = ops::prelu(Var(x), Var(Tensor({2}, 0.25))).value();
        CHECK(y[0] == 3.0);
        CHECK(y[1] == -0.25);
        // slope gradient at x = -1 is -1, checked against central differences
        Tape tape;
        const Var a = tape.leaf("a", Tensor({1}, 0.25));
        const Gradients g = tape.backward(ops::sum(ops::prelu(Var(Tensor({1}, -1.0)), a)));
        CHECK(g.at("a")[0] == -1.0);
        const auto fd = finite_difference_gradient(
            [](const NamedTensors& p) { return ops::prelu(Var(Tensor({1}, -1.0)), Var(p.at("a"))).value().item(); },
            {{"a", Tensor({1}, 0.25)}});
        CHECK(fd.at("a")[0] == doctest::Approx(-1.0).epsilon(1e-9));
    }
}

TEST_SUITE("softmax") {
    TEST_CASE("closed forms") {
        CHECK(ops::softmax(Var(Tensor::from({0, 0})), 0).value().values() == std::vector<double>{0.5, 0.5});
        const Tensor y = ops::softmax(Var(Tensor::from({std::log(1.0), std::log(3.0)})), 0).value();
        CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-15));
    }

    TEST_CASE("shift invariance, normalization and stability") {
        std::mt19937_64 rng(10);
        const Tensor x = random_tensor({4, 6}, rng, -5, 5);
        Tensor shifted = x;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 6; ++c) shifted[r * 6 + c] += 100.0 * static_cast<double>(r + 1);
        const Tensor a = ops::softmax(Var(x), 1).value(), b = ops::softmax(Var(shifted), 1).value();
        CHECK(max_abs_diff(a, b) < 1e-12);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                CHECK(a[r * 6 + c] >= 0.0);
                s += a[r * 6 + c];
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        const Tensor big = ops::softmax(Var(Tensor::from({1000, 1000})), 0).value();
        CHECK(big.all_finite());
    }
}

TEST_SUITE("matmul and pooling") {
    TEST_CASE("identity, worked example, associativity") {
        std::mt19937_64 rng(11);
        const Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng), c = random_tensor({3, 3}, rng);
        Tensor eye({3, 3}, 0.0);
        for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 1.0;
        CHECK(ops::matmul(Var(eye), Var(a)).value() == a);
        CHECK(ops::matmul(Var(Tensor({1, 2}, {1, 2})), Var(Tensor({2, 1}, {3, 4}))).value().item() == 11.0);
        const Tensor l = ops::matmul(ops::matmul(Var(a), Var(b)), Var(c)).value();
        const Tensor r = ops::matmul(Var(a), ops::matmul(Var(b), Var(c))).value();
        CHECK(max_abs_diff(l, r) <= 1e-12);
        CHECK_THROWS_AS(ops::matmul(Var(Tensor({2, 3})), Var(Tensor({2, 3}))), std::invalid_argument);
    }

    TEST_CASE("global average pooling") {
        CHECK(ops::global_pool(Var(Tensor({3, 2, 4}, 1.5)), 1).value().values() == std::vector<double>(2, 1.5));
        CHECK(ops::global_pool(Var(Tensor({4, 3, 5}, 1.0)), 0).value().values() == std::vector<double>(4, 1.0));
        Tensor x({2, 2, 2});
        std::iota(x.data().begin(), x.data().end(), 1.0);
        // t = 0 holds {1,2,5,6}, t = 1 holds {3,4,7,8}
        CHECK(ops::global_pool(Var(x), 1).value().values() == std::vector<double>{3.5, 5.5});
    }
}

TEST_SUITE("gru_layer") {
    ops::GruWeights zero_weights(std::size_t hid, std::size_t in) {
        return {Var(Tensor({3 * hid, in}, 0.0)), Var(Tensor({3 * hid, hid}, 0.0)), Var(Tensor({3 * hid}, 0.0)),
                Var(Tensor({3 * hid}, 0.0))};
    }

    TEST_CASE("zero weights halve the state every step") {
        std::mt19937_64 rng(12);
        const Tensor x = random_tensor({4, 3}, rng);
        const Tensor out = ops::gru_layer(Var(x), Var(Tensor::from({2.0, -4.0})), zero_weights(2, 3)).value();
        double scale = 0.5;
        for (std::size_t t = 0; t < 4; ++t, scale *= 0.5) {
            CHECK(out[t * 2] == 2.0 * scale);
            CHECK(out[t * 2 + 1] == -4.0 * scale);
        }
    }

    TEST_CASE("zero everything gives zeros") {
        const Tensor out = ops::gru_layer(Var(Tensor({5, 3}, 0.0)), Var(Tensor({2}, 0.0)), zero_weights(2, 3)).value();
        for (double v : out.data()) CHECK(v == 0.0);
    }

    TEST_CASE("gradients match central differences") {
        std::mt19937_64 rng(13);
        const std::vector<Tensor> in{random_tensor({2, 4, 3}, rng), random_tensor({3}, rng),
                                     random_tensor({9, 3}, rng),    random_tensor({9, 3}, rng),
                                     random_tensor({9}, rng),       random_tensor({9}, rng)};
        const double err = gradient_error(
            [](const std::vector<Var>& v) { return probe(ops::gru_layer(v[0], v[1], {v[2], v[3], v[4], v[5]})); }, in);
        CHECK(err <= 1e-5);
    }
}

TEST_SUITE("autograd") {
    TEST_CASE("d(x^2)/dx at 3 is 6") {
        Tape tape;
        const Var x = tape.leaf("x", Tensor::scalar(3.0));
        CHECK(tape.backward(ops::mul(x, x)).at("x").item() == 6.0);
        CHECK(tape.consumed());
    }

    TEST_CASE("non-scalar losses and reuse are rejected") {
        Tape tape;
        const Var x = tape.leaf("x", Tensor({2}, 1.0));
        CHECK_THROWS_AS(tape.backward(ops::scale(x, 2.0)), std::invalid_argument);
        tape.backward(ops::sum(x));
        CHECK_THROWS_AS(tape.backward(ops::sum(x)), std::logic_error);
    }

    TEST_CASE("unreached leaves get zero gradients") {
        Tape tape;
        const Var x = tape.leaf("x", Tensor({2}, 1.0));
        tape.leaf("unused", Tensor({3}, 1.0));
        const Gradients g = tape.backward(ops::sum(x));
        CHECK(g.at("unused") == Tensor({3}, 0.0));
    }

    TEST_CASE("finite differences: quadratic and linear") {
        const auto g = finite_difference_gradient([](const NamedTensors& p) { return p.at("p")[0] * p.at("p")[0]; },
                                                  {{"p", Tensor({1}, 1.0)}});
        CHECK(std::abs(g.at("p")[0] - 2.0) <= 1e-9);
        const auto lin = finite_difference_gradient([](const NamedTensors& p) { return 3.0 * p.at("p")[0] - 1.0; },
                                                    {{"p", Tensor({1}, 0.7)}}, 0.5);
        CHECK(lin.at("p")[0] == doctest::Approx(3.0).epsilon(1e-14));
    }

    TEST_CASE("finite differences agree with backward on a two-layer net") {
        std::mt19937_64 rng(14);
        const Tensor x = random_tensor({3, 5}, rng);
        auto net = [&x](const std::vector<Var>& v) {
            const Var h = ops::tanh(ops::pointwise_conv1d(Var(x), v[0], v[1]));
            return ops::mean(ops::sigmoid(ops::pointwise_conv1d(h, v[2], v[3])));
        };
        const double err = gradient_error(
            net, {random_tensor({4, 3, 1}, rng), random_tensor({4}, rng), random_tensor({2, 4, 1}, rng),
                  random_tensor({2}, rng)});
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("every differentiable op matches central differences") {
    std::mt19937_64 rng(15);
    using F = std::function<Var(const std::vector<Var>&)>;
    struct Case {
        const char* name;
        F f;
        std::vector<Shape> shapes;
    };
    ops::Conv2dOptions dil;
    dil.dilation = {2, 1};
    dil.padding = {2, 1};
    ops::Conv2dOptions strided;
    strided.stride = {1, 2};
    strided.padding = {0, 1};
    ops::Conv2dOptions grouped;
    grouped.groups = 2;
    grouped.padding = {1, 1};
    const std::vector<Case> cases{
        {"add", [](auto& v) { return probe(ops::add(v[0], v[1])); }, {{3, 4}, {3, 4}}},
        {"sub", [](auto& v) { return probe(ops::sub(v[0], v[1])); }, {{3, 4}, {3, 4}}},
        {"mul", [](auto& v) { return probe(ops::mul(v[0], v[1])); }, {{3, 4}, {3, 4}}},
        {"scale", [](auto& v) { return probe(ops::scale(v[0], -1.7)); }, {{5}}},
        {"mean", [](auto& v) { return ops::mean(ops::mul(v[0], v[0])); }, {{2, 3}}},
        {"mse", [](auto& v) { return ops::mse(v[0], v[1]); }, {{7}, {7}}},
        {"reshape", [](auto& v) { return probe(ops::reshape(v[0], {6, 2})); }, {{3, 4}}},
        {"permute", [](auto& v) { return probe(ops::permute(v[0], {2, 0, 1})); }, {{2, 3, 4}}},
        {"concat", [](auto& v) { return probe(ops::concat({v[0], v[1]})); }, {{2, 3}, {1, 3}}},
        {"slice", [](auto& v) { return probe(ops::slice(v[0], 1, 2)); }, {{4, 3}}},
        {"conv2d dilated", [dil](auto& v) { return probe(ops::conv2d(v[0], v[1], v[2], dil)); }, {{2, 5, 4}, {3, 2, 3, 3}, {3}}},
        {"conv2d strided", [strided](auto& v) { return probe(ops::conv2d(v[0], v[1], v[2], strided)); }, {{2, 3, 8}, {2, 2, 1, 3}, {2}}},
        {"conv2d grouped", [grouped](auto& v) { return probe(ops::conv2d(v[0], v[1], Var{}, grouped)); }, {{4, 4, 4}, {2, 2, 3, 3}}},
        {"pointwise_conv1d", [](auto& v) { return probe(ops::pointwise_conv1d(v[0], v[1], v[2])); }, {{3, 6}, {2, 3, 1}, {2}}},
        {"subpixel_shuffle", [](auto& v) { return probe(ops::subpixel_shuffle(v[0], 2)); }, {{4, 2, 3}}},
        {"layer_norm", [](auto& v) { return probe(ops::layer_norm(v[0], {0}, v[1], v[2], 1e-5)); }, {{4, 2, 3}, {4}, {4}}},
        {"layer_norm 2 axes", [](auto& v) { return probe(ops::layer_norm(v[0], {0, 2}, v[1], v[2], 1e-5)); }, {{3, 2, 4}, {3, 4}, {3, 4}}},
        {"sigmoid", [](auto& v) { return probe(ops::sigmoid(v[0])); }, {{6}}},
        {"tanh", [](auto& v) { return probe(ops::tanh(v[0])); }, {{6}}},
        {"relu", [](auto& v) { return probe(ops::relu(v[0])); }, {{6}}},
        {"prelu", [](auto& v) { return probe(ops::prelu(v[0], v[1])); }, {{3, 5}, {3}}},
        {"softmax axis 0", [](auto& v) { return probe(ops::softmax(v[0], 0)); }, {{4, 3}}},
        {"softmax axis 1", [](auto& v) { return probe(ops::softmax(v[0], 1)); }, {{2, 5}}},
        {"matmul", [](auto& v) { return probe(ops::matmul(v[0], v[1])); }, {{3, 4}, {4, 2}}},
        {"transpose", [](auto& v) { return probe(ops::transpose(v[0])); }, {{3, 4}}},
        {"global_pool", [](auto& v) { return probe(ops::global_pool(v[0], 1)); }, {{2, 3, 4}}},
        {"scale_channels", [](auto& v) { return probe(ops::scale_channels(v[0], v[1])); }, {{3, 2, 2}, {3}}},
        {"axis_mix 0", [](auto& v) { return probe(ops::axis_mix(v[0], v[1], 0)); }, {{3, 2, 4}, {3, 3}}},
        {"axis_mix 1", [](auto& v) { return probe(ops::axis_mix(v[0], v[1], 1)); }, {{3, 2, 4}, {2, 2}}},
        {"axis_mix 2", [](auto& v) { return probe(ops::axis_mix(v[0], v[1], 2)); }, {{3, 2, 4}, {4, 4}}},
    };
    for (const auto& c : cases) {
        std::vector<Tensor> in;
        for (const auto& s : c.shapes) in.push_back(random_tensor(s, rng));
        INFO(c.name);
        CHECK(gradient_error(c.f, in) <= 1e-5);
    }
}
