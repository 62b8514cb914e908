#pragma once

// AdamW with decoupled weight decay, plus an EMA shadow of the parameters.
// Only parameters that actually received a gradient entry are updated;
// absence of a gradient means the parameter was unreachable in this step's
// graph and is left untouched.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "flowback/params.hpp"

namespace flowback {

struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  long t = 0;
  GradMap m, v;

  void step(ParamSet& params, const GradMap& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const auto& g = git->second;
      auto& mi = m[name];
      auto& vi = v[name];
      if (mi.size() != g.size()) mi.assign(g.size(), 0.0);
      if (vi.size() != g.size()) vi.assign(g.size(), 0.0);
      auto& data = p.mutable_data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        mi[i] = beta1 * mi[i] + (1.0 - beta1) * g[i];
        vi[i] = beta2 * vi[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = mi[i] / bc1;
        const double vhat = vi[i] / bc2;
        data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                         weight_decay * data[i]);
      }
    }
  }
};

struct Ema {
  double decay = 0.9999;
  GradMap shadow;

  void init(const ParamSet& params) { shadow = params.values(); }
  void update(const ParamSet& params) {
    for (const auto& [name, p] : params) {
      auto& s = shadow[name];
      if (s.size() != p.size()) s = p.data();
      const auto& d = p.data();
      for (std::size_t i = 0; i < d.size(); ++i)
        s[i] = decay * s[i] + (1.0 - decay) * d[i];
    }
  }
};

}  // namespace flowback
