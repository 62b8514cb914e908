#pragma once

// Representation alignment: frozen target-feature provider, learnable
// projector, patch-wise cosine alignment loss, and the three gradient
// routing strategies (Forward / Detach / Reverse with the accelerated
// cached pseudo-reverse pass).

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flowback/model.hpp"
#include "flowback/optim.hpp"

namespace flowback {

enum class Strategy { Forward, Detach, Reverse };

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "forward") return Strategy::Forward;
  if (s == "detach") return Strategy::Detach;
  if (s == "reverse") return Strategy::Reverse;
  throw GraphError("unknown alignment strategy: " + s);
}
inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Forward:
      return "forward";
    case Strategy::Detach:
      return "detach";
    default:
      return "reverse";
  }
}

struct AlignSite {
  std::size_t block;  // 0-based
  std::size_t layer;  // 0-based
};

struct AlignmentConfig {
  Strategy strategy = Strategy::Reverse;
  std::vector<AlignSite> sites;
  double lambda_align = 0.1;

  void validate(std::size_t n_blocks, std::size_t n_layers) const {
    if (lambda_align > 0.0 && sites.empty())
      throw GraphError("alignment: lambda > 0 requires at least one site");
    for (const auto& s : sites)
      if (s.block >= n_blocks || s.layer >= n_layers)
        throw GraphError("alignment site out of model bounds");
  }
};

// Frozen feature provider. The stub is a fixed seeded linear map over each
// token's channels followed by tanh; it never enters the gradient graph.
struct TargetEncoder {
  enum class Kind { Stub, FileInjected };
  Kind kind = Kind::Stub;
  std::size_t in_channels = 0, dfeat = 0;
  std::vector<double> w;  // [C, dfeat]
  std::vector<double> b;  // [dfeat]
  std::map<std::string, std::vector<double>> injected;  // id -> [P * dfeat]

  static TargetEncoder stub(std::size_t channels, std::size_t dfeat,
                            std::uint64_t seed) {
    TargetEncoder e;
    e.kind = Kind::Stub;
    e.in_channels = channels;
    e.dfeat = dfeat;
    DetRng rng(seed);
    e.w.resize(channels * dfeat);
    e.b.resize(dfeat);
    for (auto& x : e.w) x = rng.normal();
    for (auto& x : e.b) x = 0.2 * rng.normal();
    return e;
  }

  // x: token matrix [P, C] flattened; returns [P * dfeat].
  std::vector<double> features(const std::vector<double>& x,
                               const std::string& sample_id = "") const {
    if (kind == Kind::FileInjected) {
      auto it = injected.find(sample_id);
      if (it == injected.end())
        throw GraphError("no injected features for sample id '" + sample_id +
                         "'");
      return it->second;
    }
    if (x.size() % in_channels != 0)
      throw GraphError("target encoder: input not a multiple of channels");
    const std::size_t p = x.size() / in_channels;
    std::vector<double> v(p * dfeat);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t f = 0; f < dfeat; ++f) {
        double s = b[f];
        for (std::size_t c = 0; c < in_channels; ++c)
          s += x[i * in_channels + c] * w[c * dfeat + f];
        v[i * dfeat + f] = std::tanh(s);
      }
    return v;
  }
};

// Three affine layers with SiLU in between, token-wise C -> dfeat.
struct Projector {
  Var w1, b1, w2, b2, w3, b3;
  std::size_t hidden = 0, dfeat = 0;

  Var apply(const Var& h) const {
    Var u = silu(add(matmul(h, w1), b1));
    u = silu(add(matmul(u, w2), b2));
    return add(matmul(u, w3), b3);
  }
};

inline Projector make_projector(std::size_t channels, std::size_t hidden,
                                std::size_t dfeat, ParamSet& params,
                                DetRng& rng) {
  auto randn = [&](Shape shape, double scale) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return v;
  };
  Projector p;
  p.hidden = hidden;
  p.dfeat = dfeat;
  p.w1 = params.add("proj.w1", {channels, hidden},
                    randn({channels, hidden}, 1.0 / std::sqrt(double(channels))));
  p.b1 = params.add("proj.b1", {1, hidden}, std::vector<double>(hidden, 0.0));
  p.w2 = params.add("proj.w2", {hidden, hidden},
                    randn({hidden, hidden}, 1.0 / std::sqrt(double(hidden))));
  p.b2 = params.add("proj.b2", {1, hidden}, std::vector<double>(hidden, 0.0));
  p.w3 = params.add("proj.w3", {hidden, dfeat},
                    randn({hidden, dfeat}, 1.0 / std::sqrt(double(hidden))));
  p.b3 = params.add("proj.b3", {1, dfeat}, std::vector<double>(dfeat, 0.0));
  return p;
}

// Negative mean patch-wise cosine similarity; in [-1, 1].
inline Var align_loss_site(const Var& trace_h, const std::vector<double>& v,
                           std::size_t dfeat, const Projector& proj) {
  const std::size_t p = trace_h.shape()[0];
  if (v.size() != p * dfeat)
    throw GraphError("alignment target has wrong patch geometry");
  Var ph = proj.apply(trace_h);
  Var vc = Var::constant({p, dfeat}, v);
  return neg(meanv(cosine_rows(ph, vc)));
}

// L_total = L_NF + lambda * mean(site losses).
inline Var total_loss(const Var& nf, const std::vector<Var>& site_losses,
                      double lambda_align) {
  if (lambda_align == 0.0 || site_losses.empty()) return nf;
  Var s = site_losses[0];
  for (std::size_t i = 1; i < site_losses.size(); ++i)
    s = add(s, site_losses[i]);
  return add(nf, affine(s, lambda_align / double(site_losses.size()), 0.0));
}

// Parameter groups touched by the alignment term alone, per strategy.
inline std::set<std::string> gradient_footprint(Strategy strategy,
                                                std::size_t aligned_block,
                                                std::size_t n_blocks) {
  if (aligned_block < 1 || aligned_block > n_blocks)
    throw GraphError("gradient_footprint: block index out of range");
  std::set<std::string> groups{"proj"};
  std::size_t lo = 1, hi = n_blocks;
  switch (strategy) {
    case Strategy::Forward:
      hi = aligned_block;
      break;
    case Strategy::Detach:
      lo = hi = aligned_block;
      break;
    case Strategy::Reverse:
      lo = aligned_block;
      break;
  }
  for (std::size_t t = lo; t <= hi; ++t)
    groups.insert("block." + std::to_string(t));
  return groups;
}

// Builds the per-sample training graph: the NF loss from the forward pass
// plus one alignment loss per configured site, routed per strategy. The
// strategies differ only in where graph cuts sit; gradient maps are never
// masked after the fact.
struct SampleGraph {
  Var nf;
  std::vector<Var> site_losses;
};

inline SampleGraph build_sample_graph(const Var& x, const Var& cond,
                                      const FlowModel& model,
                                      const AlignmentConfig& cfg,
                                      const Projector& proj,
                                      const std::vector<double>& target_v,
                                      bool naive_reverse = false) {
  SampleGraph out;
  EncodeResult enc = encode(x, cond, model);
  out.nf = nf_loss(enc);
  if (cfg.lambda_align == 0.0 || cfg.sites.empty()) return out;

  const std::size_t t_blocks = model.blocks.size();
  auto sites_at = [&](std::size_t t) {
    std::vector<std::size_t> layers;
    for (const auto& s : cfg.sites)
      if (s.block == t) layers.push_back(s.layer);
    return layers;
  };

  switch (cfg.strategy) {
    case Strategy::Forward: {
      for (const auto& s : cfg.sites)
        out.site_losses.push_back(align_loss_site(
            enc.traces[s.block].hidden[s.layer], target_v, proj.dfeat, proj));
      break;
    }
    case Strategy::Detach: {
      for (std::size_t t = 0; t < t_blocks; ++t) {
        auto layers = sites_at(t);
        if (layers.empty()) continue;
        // Re-evaluate the block on the cut copy of its forward input.
        BlockTrace tr = param_net(enc.cached_inputs[t], cond, model.blocks[t]);
        for (auto l : layers)
          out.site_losses.push_back(
              align_loss_site(tr.hidden[l], target_v, proj.dfeat, proj));
      }
      break;
    }
    case Strategy::Reverse: {
      Var zcur = cut(enc.z);
      for (std::size_t t = t_blocks; t-- > 0;) {
        auto layers = sites_at(t);
        BlockInverse inv =
            naive_reverse
                ? block_inverse_naive(zcur, cond, model.blocks[t],
                                      !layers.empty())
                : block_inverse_cached(zcur, enc.cached_inputs[t], cond,
                                       model.blocks[t], !layers.empty());
        for (auto l : layers)
          out.site_losses.push_back(
              align_loss_site(inv.trace.hidden[l], target_v, proj.dfeat, proj));
        zcur = inv.x;
      }
      break;
    }
  }
  return out;
}

struct TrainBatch {
  std::vector<std::vector<double>> x;       // model inputs (possibly noisy)
  std::vector<Var> conds;                   // conditioning rows
  std::vector<std::vector<double>> targets;  // frozen encoder features
};

struct StepReport {
  double nf_loss = 0.0;
  double align_loss = 0.0;
  double total = 0.0;
};

// One optimizer update over a batch. All per-sample losses merge into a
// single graph and one backward pass; the gradient maps are summed by the
// graph itself in deterministic order.
inline StepReport align_training_step(const TrainBatch& batch, FlowModel& model,
                                     const AlignmentConfig& cfg,
                                     const Projector& proj, AdamW& opt,
                                     Ema* ema, bool naive_reverse = false) {
  cfg.validate(model.blocks.size(),
               model.blocks.empty() ? 0 : model.blocks[0].layers.size());
  const std::size_t b = batch.x.size();
  if (b == 0) throw GraphError("align_training_step: empty batch");

  Var nf_sum = Var::scalar(0.0);
  Var align_sum = Var::scalar(0.0);
  std::size_t n_sites = 0;
  Var total_sum = Var::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    Var x = Var::constant({model.D, model.C}, batch.x[i]);
    SampleGraph g = build_sample_graph(x, batch.conds[i], model, cfg, proj,
                                       batch.targets.empty()
                                           ? std::vector<double>{}
                                           : batch.targets[i],
                                       naive_reverse);
    nf_sum = add(nf_sum, g.nf);
    for (const auto& s : g.site_losses) align_sum = add(align_sum, s);
    n_sites += g.site_losses.size();
    total_sum = add(total_sum, total_loss(g.nf, g.site_losses, cfg.lambda_align));
  }
  Var total = affine(total_sum, 1.0 / double(b), 0.0);
  if (!std::isfinite(total.item()))
    throw GraphError("align_training_step: non-finite loss");

  Gradients g = backward(total);
  GradMap gm = grads_for(g, model.params);
  opt.step(model.params, gm);
  if (ema) ema->update(model.params);

  StepReport rep;
  rep.nf_loss = nf_sum.item() / double(b);
  rep.align_loss = n_sites ? align_sum.item() / double(n_sites) : 0.0;
  rep.total = total.item();
  return rep;
}

}  // namespace flowback
