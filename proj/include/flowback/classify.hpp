#pragma once

// Training-free classification: the single-step soft-logit gradient rule,
// a brute-force per-class likelihood oracle, and the multi-step variant.

#include <cstddef>
#include <vector>

#include "flowback/model.hpp"

namespace flowback {

// e_eff = softmax(lambda)^T E over the K real classes.
inline Var soft_embedding(const Var& lambda, const Var& embeddings) {
  if (lambda.shape().size() != 2 || lambda.shape()[0] != 1)
    op_error("soft_embedding", "logits must be a [1, K] row");
  const std::size_t k = lambda.shape()[1];
  if (embeddings.shape()[0] != k)
    op_error("soft_embedding", "logits / embedding row count mismatch");
  return matmul(masked_softmax_rows(lambda, std::vector<uint8_t>(k, 1)),
                embeddings);
}

inline std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct SingleStepResult {
  std::size_t label = 0;
  std::vector<double> grad;  // [K]
};

// Gradient of log p(x | e_eff) w.r.t. the soft class logits at lambda = 0;
// the prediction is the largest component (ties -> lowest index).
inline SingleStepResult classify_single_step(const std::vector<double>& x,
                                             const FlowModel& model) {
  const std::size_t k = model.K;
  Var lambda = Var::leaf({1, k}, std::vector<double>(k, 0.0), true);
  Var e_eff =
      soft_embedding(lambda, slice_rows(model.class_embeddings, 0, k));
  Var xv = Var::constant({model.D, model.C}, x);
  Var logp = log_likelihood(xv, e_eff, model);
  if (!std::isfinite(logp.item()))
    throw GraphError("classify_single_step: non-finite likelihood");
  Gradients g = backward(logp);
  SingleStepResult r;
  r.grad = g.at(lambda);
  r.label = argmax_lowest(r.grad);
  return r;
}

struct BruteForceResult {
  std::size_t label = 0;
  std::vector<double> log_likelihoods;  // [K]
};

inline BruteForceResult classify_bruteforce(const std::vector<double>& x,
                                            const FlowModel& model) {
  BruteForceResult r;
  Var xv = Var::constant({model.D, model.C}, x);
  for (std::size_t k = 0; k < model.K; ++k) {
    Var logp = log_likelihood(xv, cut(model.cond(k)), model);
    r.log_likelihoods.push_back(logp.item());
  }
  r.label = argmax_lowest(r.log_likelihoods);
  return r;
}

// Gradient ascent on the logits; prediction is the final softmax argmax.
inline std::size_t classify_multistep(const std::vector<double>& x,
                                      const FlowModel& model,
                                      std::size_t steps, double lr) {
  if (steps < 1) throw GraphError("classify_multistep: steps must be >= 1");
  const std::size_t k = model.K;
  std::vector<double> logits(k, 0.0);
  Var xv = Var::constant({model.D, model.C}, x);
  for (std::size_t s = 0; s < steps; ++s) {
    Var lambda = Var::leaf({1, k}, logits, true);
    Var e_eff =
        soft_embedding(lambda, slice_rows(model.class_embeddings, 0, k));
    Var logp = log_likelihood(xv, e_eff, model);
    Gradients g = backward(logp);
    const auto& gl = g.at(lambda);
    for (std::size_t i = 0; i < k; ++i) {
      logits[i] += lr * gl[i];
      if (!std::isfinite(logits[i]))
        throw GraphError("classify_multistep: diverged (non-finite logits)");
    }
  }
  return argmax_lowest(logits);
}

}  // namespace flowback
