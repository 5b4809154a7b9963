#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcnn/autograd.hpp"

namespace pcnn {

// Ordered collection of named parameter tensors.
class ParamSet {
  public:
    void add(std::string name, Tensor value);

    bool contains(std::string_view name) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

    NamedTensors to_map() const;
    // Replaces every value from `values`; names and shapes must match.
    void assign(const NamedTensors& values);

    bool operator==(const ParamSet& other) const { return entries_ == other.entries_; }

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Seeded parameter initializer. Weights are uniform in +-sqrt(1/fan_in);
// biases start at zero.
class ParamInit {
  public:
    ParamInit(ParamSet& out, std::uint64_t seed) : out_(out), rng_(seed) {}

    void uniform(const std::string& name, Shape shape, std::size_t fan_in);
    void constant(const std::string& name, Shape shape, double value);
    void zeros(const std::string& name, Shape shape) { constant(name, std::move(shape), 0.0); }

  private:
    ParamSet& out_;
    std::mt19937_64 rng_;
};

// Vars for one forward pass: tape leaves when a tape is given, constants
// otherwise.
class Bindings {
  public:
    Bindings(const ParamSet& params, Tape* tape);

    const Var& get(std::string_view name) const;

  private:
    std::unordered_map<std::string, Var> vars_;
};

// Name prefix view into Bindings.
class Scope {
  public:
    Scope(const Bindings& bindings, std::string prefix) : bindings_(&bindings), prefix_(std::move(prefix)) {}

    const Var& operator[](std::string_view name) const;
    Scope sub(std::string_view name) const;
    const std::string& prefix() const { return prefix_; }

  private:
    const Bindings* bindings_;
    std::string prefix_;
};

std::string join_name(std::string_view prefix, std::string_view name);

} // namespace pcnn
