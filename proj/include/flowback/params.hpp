#pragma once

// Named parameter leaves and the finite-difference gradient oracle.

#include <functional>
#include <map>
#include <string>

#include "flowback/graph.hpp"

namespace flowback {

using GradMap = std::map<std::string, std::vector<double>>;

// Map from parameter path to grad-enabled leaf. Iteration order is
// lexicographic via std::map, which fixes reduction order everywhere.
class ParamSet {
 public:
  Var add(const std::string& name, Shape shape, std::vector<double> data) {
    if (params_.count(name))
      throw GraphError("duplicate parameter name: " + name);
    Var v = Var::leaf(std::move(shape), std::move(data), true);
    params_.emplace(name, v);
    return v;
  }
  void put(const std::string& name, Var v) {
    if (params_.count(name))
      throw GraphError("duplicate parameter name: " + name);
    params_.emplace(name, std::move(v));
  }
  const Var& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw GraphError("no such parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name); }
  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  // Copy of all current values, keyed by path.
  GradMap values() const {
    GradMap out;
    for (const auto& [k, v] : params_) out[k] = v.data();
    return out;
  }
  void load_values(const GradMap& vals) {
    for (auto& [k, v] : params_) {
      auto it = vals.find(k);
      if (it == vals.end()) throw GraphError("missing value for " + k);
      if (it->second.size() != v.size())
        throw GraphError("size mismatch loading " + k);
      v.mutable_data() = it->second;
    }
  }

 private:
  std::map<std::string, Var> params_;
};

// Gradient entries for named parameters. A parameter that is unreachable
// from the loss (or reachable only through a cut) gets no entry.
inline GradMap grads_for(const Gradients& g, const ParamSet& params) {
  GradMap out;
  for (const auto& [name, v] : params) {
    if (const auto* gv = g.find(v)) out[name] = *gv;
  }
  return out;
}

// Central-difference gradient of a scalar function of the parameter set.
inline GradMap finite_diff_grad(const std::function<double(ParamSet&)>& f,
                                ParamSet& params, double epsilon) {
  if (!(epsilon > 0.0)) throw GraphError("finite_diff_grad: epsilon <= 0");
  GradMap out;
  for (auto& [name, v] : params) {
    std::vector<double> g(v.size(), 0.0);
    auto& data = v.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + epsilon;
      const double fp = f(params);
      data[i] = orig - epsilon;
      const double fm = f(params);
      data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw GraphError("finite_diff_grad: non-finite evaluation at " + name);
      g[i] = (fp - fm) / (2.0 * epsilon);
    }
    out[name] = std::move(g);
  }
  return out;
}

}  // namespace flowback
