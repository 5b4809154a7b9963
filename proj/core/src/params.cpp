#include "pcnn/params.hpp"

#include <cmath>
#include <stdexcept>

namespace pcnn {

std::string join_name(std::string_view prefix, std::string_view name) {
    if (prefix.empty()) return std::string(name);
    std::string out(prefix);
    out += '.';
    out += name;
    return out;
}

void ParamSet::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const Tensor& ParamSet::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return entries_[it->second].second;
}

Tensor& ParamSet::at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

NamedTensors ParamSet::to_map() const {
    NamedTensors out;
    for (const auto& [name, t] : entries_) out.emplace(name, t);
    return out;
}

void ParamSet::assign(const NamedTensors& values) {
    if (values.size() != entries_.size()) throw std::invalid_argument("parameter count mismatch on assign");
    for (auto& [name, t] : entries_) {
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("missing parameter on assign: " + name);
        if (it->second.shape() != t.shape())
            throw std::invalid_argument("shape mismatch on assign for " + name + ": " + shape_str(it->second.shape()) +
                                        " vs " + shape_str(t.shape()));
        t = it->second;
    }
}

void ParamInit::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng_);
    out_.add(name, std::move(t));
}

void ParamInit::constant(const std::string& name, Shape shape, double value) {
    out_.add(name, Tensor(std::move(shape), value));
}

Bindings::Bindings(const ParamSet& params, Tape* tape) {
    for (const auto& [name, t] : params.entries()) vars_.emplace(name, tape ? tape->leaf(name, t) : Var(t));
}

const Var& Bindings::get(std::string_view name) const {
    auto it = vars_.find(std::string(name));
    if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + std::string(name));
    return it->second;
}

const Var& Scope::operator[](std::string_view name) const { return bindings_->get(join_name(prefix_, name)); }

Scope Scope::sub(std::string_view name) const { return Scope(*bindings_, join_name(prefix_, name)); }

} // namespace pcnn
