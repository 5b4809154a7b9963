#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcnn/tensor.hpp"

namespace pcnn {

class Tape;

using Gradients = std::map<std::string, Tensor>;

namespace detail {

struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the inputs that require it.
    std::function<void(Node&)> backward;
    Tape* tape = nullptr;
    std::string name;

    bool requires_grad() const { return tape != nullptr; }
    Tensor& grad_buffer();
};

} // namespace detail

// Handle to a value that may be recorded on a gradient tape. Copying a Var
// shares the underlying node. Untracked Vars are plain constants.
class Var {
  public:
    Var() = default;
    explicit Var(Tensor value);

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad(); }
    Tape* tape() const { return node_ ? node_->tape : nullptr; }
    bool valid() const { return node_ != nullptr; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

  private:
    friend class Tape;
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Var make_result(Tensor, std::vector<Var>, std::function<void(detail::Node&)>);

    std::shared_ptr<detail::Node> node_;
};

// Creates the output of an op. If any input is tracked, the result joins the
// same tape with the given backward rule; otherwise the rule is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

// Ordered record of the ops executed during one forward pass. Single writer;
// one tape per pass.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a named tensor whose gradient is wanted.
    Var leaf(std::string name, Tensor value);

    std::size_t size() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

    // Replays the adjoints from a scalar loss. Returns one gradient per leaf,
    // shaped like the leaf. The tape cannot be reused afterwards.
    Gradients backward(const Var& loss);

  private:
    friend Var make_result(Tensor, std::vector<Var>, std::function<void(detail::Node&)>);

    std::vector<std::shared_ptr<detail::Node>> ops_;
    std::vector<std::shared_ptr<detail::Node>> leaves_;
    bool consumed_ = false;
};

inline Gradients backward(Tape& tape, const Var& loss) { return tape.backward(loss); }

using NamedTensors = std::map<std::string, Tensor>;

// Central-difference gradient of a scalar function of named tensors.
// Coordinates are perturbed one at a time, in place on a private copy.
Gradients finite_difference_gradient(const std::function<double(const NamedTensors&)>& f, NamedTensors params,
                                     double eps = 1e-6);

// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

// Floor for relative_error when checking gradients of an objective whose
// value is `objective`. Central differences at eps 1e-6 carry roundoff of
// about 1e-10 * |objective| per entry, so gradients smaller than this are
// compared in absolute terms (some are exactly zero, e.g. a bias added
// uniformly before a softmax).
inline double gradient_floor(double objective) { return 1e-4 * std::abs(objective) + 1e-12; }

} // namespace pcnn
