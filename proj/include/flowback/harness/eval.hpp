#pragma once

// Evaluation: paired classifier report (single-step vs brute force, plus
// the multi-step robustness sweep), deterministic sampling into archives,
// and per-class sample moments.

#include <string>
#include <vector>

#include "flowback/classify.hpp"
#include "flowback/harness/data.hpp"
#include "flowback/harness/frechet.hpp"
#include "flowback/harness/train.hpp"

namespace flowback {

struct ClassifyReport {
  std::size_t n = 0;
  double acc_single = 0.0;
  double acc_brute = 0.0;
  double agreement = 0.0;                 // single-step vs brute-force
  std::vector<double> multi_lrs;
  std::vector<double> multi_agreement;    // multi-step vs single-step
};

inline ClassifyReport classify_report(const FlowModel& model,
                                      const ToyData& data, std::size_t n,
                                      DetRng& rng,
                                      const std::vector<double>& multi_lrs = {},
                                      std::size_t multi_steps = 5,
                                      std::size_t multi_n = 0) {
  ClassifyReport rep;
  rep.n = n;
  rep.multi_lrs = multi_lrs;
  rep.multi_agreement.assign(multi_lrs.size(), 0.0);
  if (multi_n == 0) multi_n = n;
  std::size_t hit_s = 0, hit_b = 0, agree = 0;
  std::vector<std::size_t> magree(multi_lrs.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = data.draw(rng);
    const std::size_t ps = classify_single_step(s.x, model).label;
    const std::size_t pb = classify_bruteforce(s.x, model).label;
    hit_s += ps == s.label;
    hit_b += pb == s.label;
    agree += ps == pb;
    if (i < multi_n)
      for (std::size_t j = 0; j < multi_lrs.size(); ++j)
        magree[j] +=
            classify_multistep(s.x, model, multi_steps, multi_lrs[j]) == ps;
  }
  rep.acc_single = double(hit_s) / double(n);
  rep.acc_brute = double(hit_b) / double(n);
  rep.agreement = double(agree) / double(n);
  for (std::size_t j = 0; j < multi_lrs.size(); ++j)
    rep.multi_agreement[j] = double(magree[j]) / double(std::min(multi_n, n));
  return rep;
}

// n deterministic samples for one label.
inline std::vector<std::vector<double>> draw_samples(
    const FlowModel& model, std::size_t label, std::size_t n, double cfg_scale,
    std::uint64_t seed, bool denoise = false) {
  DetRng rng(seed);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(sample(label, cfg_scale, model, rng, denoise));
  return out;
}

inline void sample_moments(const std::vector<std::vector<double>>& xs,
                           std::vector<double>& mean,
                           std::vector<double>& cov) {
  if (xs.size() < 2) throw GraphError("sample_moments: need >= 2 samples");
  const std::size_t n = xs.size(), dim = xs[0].size();
  mean.assign(dim, 0.0);
  cov.assign(dim * dim, 0.0);
  for (const auto& x : xs)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
  for (auto& m : mean) m /= double(n);
  for (const auto& x : xs)
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b)
        cov[a * dim + b] += (x[a] - mean[a]) * (x[b] - mean[b]);
  for (auto& c : cov) c /= double(n - 1);
}

inline std::vector<std::vector<double>> target_features_of(
    const TargetEncoder& enc, const std::vector<std::vector<double>>& xs) {
  std::vector<std::vector<double>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(enc.features(x));
  return out;
}

// Fréchet proxy between model samples and fresh data draws, in stub-encoder
// feature space.
inline double frechet_vs_data(const FlowModel& model, const ToyData& data,
                              const TargetEncoder& enc, std::size_t label,
                              std::size_t n, std::uint64_t seed) {
  auto gen = draw_samples(model, label, n, 1.0, seed);
  DetRng rng(seed ^ 0x5eedULL);
  std::vector<std::vector<double>> real;
  real.reserve(n);
  for (std::size_t i = 0; i < n; ++i) real.push_back(data.draw_x(label, rng));
  return frechet_proxy(target_features_of(enc, gen),
                       target_features_of(enc, real));
}

}  // namespace flowback
