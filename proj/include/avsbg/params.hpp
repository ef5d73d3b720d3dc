#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "avsbg/autograd.hpp"

namespace avsbg {

/// Named, ordered collection of trainable leaves. Names are dotted module
/// paths (`visual.stem.w`) and are the checkpoint keys.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Fan-in scaled uniform init: U(-sqrt(gain / fan_in), +sqrt(gain / fan_in)).
  Var uniform(const std::string& name, Shape shape, int fan_in, double gain = 6.0) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(gain / std::max(fan_in, 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng_);
    return add(name, std::move(t));
  }

  Var zeros(const std::string& name, Shape shape) { return add(name, Tensor(std::move(shape))); }

  Var add(const std::string& name, Tensor value) {
    if (params_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
    Var v = Var::parameter(std::move(value));
    params_.emplace(name, v);
    return v;
  }

  const Var& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Var>& all() const noexcept { return params_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  /// Snapshot of all parameter values, keyed by name.
  std::map<std::string, Tensor> state() const {
    std::map<std::string, Tensor> out;
    for (const auto& [k, v] : params_) out.emplace(k, v.value());
    return out;
  }

  /// Overwrites every parameter from `state`. Names and shapes must match exactly.
  void load_state(const std::map<std::string, Tensor>& state) {
    std::string diff;
    for (const auto& [k, v] : params_) {
      auto it = state.find(k);
      if (it == state.end())
        diff += "\n  missing: " + k;
      else if (it->second.shape() != v.shape())
        diff += "\n  shape: " + k + " expected " + shape_str(v.shape()) + " got " + shape_str(it->second.shape());
    }
    for (const auto& [k, _] : state)
      if (!params_.count(k)) diff += "\n  unexpected: " + k;
    if (!diff.empty()) throw ConfigError("parameter state does not match model:" + diff);
    for (auto& [k, v] : params_) v.mutable_value() = state.at(k);
  }

 private:
  std::mt19937_64 rng_;
  std::map<std::string, Var> params_;
};

}  // namespace avsbg
