#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pcnn/autograd.hpp"
#include "pcnn/ops.hpp"
#include "pcnn/params.hpp"

namespace pcnn::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

inline std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng, double amp = 1.0) {
    std::uniform_real_distribution<double> dist(-amp, amp);
    std::vector<double> x(n);
    for (double& v : x) v = dist(rng);
    return x;
}

// Reduces an op output to a scalar through a fixed random weighting, so
// that every output element contributes a distinct adjoint.
inline Var probe(const Var& out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return ops::sum(ops::mul(out, Var(random_tensor(out.shape(), rng))));
}

// Max over inputs of the relative error between tape gradients and central
// differences of f(inputs).
inline double gradient_error(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Tensor>& inputs,
                             double eps = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    NamedTensors named;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::string name = "in" + std::to_string(i);
        leaves.push_back(tape.leaf(name, inputs[i]));
        named.emplace(name, inputs[i]);
    }
    const Var objective = f(leaves);
    const double floor = gradient_floor(objective.value().item());
    const Gradients analytic = tape.backward(objective);
    const Gradients numeric = finite_difference_gradient(
        [&](const NamedTensors& values) {
            std::vector<Var> vars;
            for (std::size_t i = 0; i < inputs.size(); ++i) vars.emplace_back(values.at("in" + std::to_string(i)));
            return f(vars).value().item();
        },
        named, eps);
    double worst = 0.0;
    for (const auto& [name, g] : analytic) worst = std::max(worst, relative_error(g, numeric.at(name), floor));
    return worst;
}

// Same check for a parameterized block: gradients of probe(f(x)) with
// respect to the input "x" and every parameter.
inline double block_gradient_error(const ParamSet& params, const Tensor& x,
                                   const std::function<Var(const Var&, const Scope&)>& f, double eps = 1e-6) {
    auto objective = [&f](const Var& in, const Scope& scope) { return probe(f(in, scope)); };
    Tape tape;
    const Bindings bound(params, &tape);
    const Var xv = tape.leaf("x", x);
    const Var value = objective(xv, Scope(bound, ""));
    const double floor = gradient_floor(value.value().item());
    const Gradients analytic = tape.backward(value);

    NamedTensors named = params.to_map();
    named.emplace("x", x);
    const Gradients numeric = finite_difference_gradient(
        [&](const NamedTensors& values) {
            ParamSet p = params;
            NamedTensors rest = values;
            const Tensor in = rest.at("x");
            rest.erase("x");
            p.assign(rest);
            const Bindings constants(p, nullptr);
            return objective(Var(in), Scope(constants, "")).value().item();
        },
        named, eps);
    double worst = 0.0;
    for (const auto& [name, g] : analytic) worst = std::max(worst, relative_error(g, numeric.at(name), floor));
    return worst;
}

} // namespace pcnn::testing
