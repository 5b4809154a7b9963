#include "pcnn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcnn {

Tensor& detail::Node::grad_buffer() {
    if (!grad) grad.emplace(value.shape(), 0.0);
    return *grad;
}

Var::Var(Tensor value) : node_(std::make_shared<detail::Node>()) { node_->value = std::move(value); }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward) {
    Tape* tape = nullptr;
    for (const auto& in : inputs) {
        if (!in.valid()) throw std::invalid_argument("op received an empty Var");
        if (!in.requires_grad()) continue;
        if (tape && tape != in.tape()) throw std::logic_error("op mixes Vars from different tapes");
        tape = in.tape();
    }
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    if (tape) {
        if (tape->consumed_) throw std::logic_error("recording onto a consumed tape");
        node->tape = tape;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node_);
        node->backward = std::move(backward);
        tape->ops_.push_back(node);
    }
    return Var(std::move(node));
}

Var Tape::leaf(std::string name, Tensor value) {
    if (consumed_) throw std::logic_error("leaf added to a consumed tape");
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->tape = this;
    node->name = std::move(name);
    leaves_.push_back(node);
    return Var(std::move(node));
}

Gradients Tape::backward(const Var& loss) {
    if (consumed_) throw std::logic_error("tape already consumed");
    if (!loss.valid() || loss.tape() != this) throw std::invalid_argument("loss is not recorded on this tape");
    if (loss.value().numel() != 1)
        throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(loss.shape()));

    loss.node()->grad_buffer()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        detail::Node& node = **it;
        if (node.grad && node.backward) node.backward(node);
    }

    Gradients out;
    for (const auto& leaf : leaves_) {
        out.insert_or_assign(leaf->name, leaf->grad ? *leaf->grad : Tensor(leaf->value.shape(), 0.0));
    }
    consumed_ = true;
    ops_.clear();
    leaves_.clear();
    return out;
}

Gradients finite_difference_gradient(const std::function<double(const NamedTensors&)>& f, NamedTensors params,
                                     double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite difference eps must be positive");
    Gradients out;
    for (auto& [name, tensor] : params) {
        Tensor g(tensor.shape(), 0.0);
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + eps;
            const double up = f(params);
            tensor[i] = saved - eps;
            const double down = f(params);
            tensor[i] = saved;
            g[i] = (up - down) / (2.0 * eps);
        }
        out.emplace(name, std::move(g));
    }
    return out;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("relative_error: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " differ");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    // The floor keeps gradients that are zero in exact arithmetic (and
    // noise-level on either side) from reading as 100% error.
    return std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), floor);
}

} // namespace pcnn
