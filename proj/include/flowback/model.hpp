#pragma once

// Stacked autoregressive flow: encoding with cut-cache capture, the exact
// negative-log-likelihood objective, noise-augmented training inputs,
// guided sequential sampling, and score-based denoising.

#include <cstddef>
#include <vector>

#include "flowback/block.hpp"
#include "flowback/graph.hpp"
#include "flowback/params.hpp"
#include "flowback/rng.hpp"

namespace flowback {

inline constexpr double kLog2Pi = 1.8378770664093454836;

struct ModelConfig {
  std::size_t blocks = 2;      // T
  std::size_t layers = 2;      // L per block
  std::size_t channels = 1;    // C
  std::size_t tokens = 2;      // D
  std::size_t classes = 2;     // K (row K of the table is the null label)
  std::size_t heads = 1;
  std::size_t ff_hidden = 8;
  double sigma_noise = 0.2;
  double init_scale = 0.3;
  // Empty = alternate identity / reversal orderings across the stack.
  std::vector<std::vector<std::size_t>> orderings;
};

struct FlowModel {
  std::vector<FlowBlock> blocks;
  Var class_embeddings;  // [K+1, C]; row K = unconditional
  std::size_t D = 0, C = 0, K = 0;
  double sigma_noise = 0.0;
  ParamSet params;

  // Live conditioning row; kNull selects the unconditional embedding.
  static constexpr std::size_t kNull = static_cast<std::size_t>(-1);
  Var cond(std::size_t label) const {
    const std::size_t row = label == kNull ? K : label;
    if (row > K)
      throw GraphError("label " + std::to_string(label) + " out of range");
    return slice_rows(class_embeddings, row, row + 1);
  }
};

inline FlowModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
  FlowModel m;
  m.D = cfg.tokens;
  m.C = cfg.channels;
  m.K = cfg.classes;
  m.sigma_noise = cfg.sigma_noise;
  DetRng rng(seed);
  for (std::size_t t = 0; t < cfg.blocks; ++t) {
    Ordering ord;
    if (t < cfg.orderings.size() && !cfg.orderings[t].empty()) {
      ord.pi = cfg.orderings[t];
      if (ord.pi.size() != cfg.tokens)
        throw GraphError("ordering length does not match token count");
    } else {
      ord = (t % 2 == 0) ? Ordering::identity(cfg.tokens)
                         : Ordering::reversal(cfg.tokens);
    }
    m.blocks.push_back(make_block(t + 1, cfg.tokens, cfg.channels, cfg.layers,
                                  cfg.heads, cfg.ff_hidden, ord, m.params, rng,
                                  cfg.init_scale));
  }
  std::vector<double> e((cfg.classes + 1) * cfg.channels);
  for (auto& v : e) v = 0.5 * rng.normal();
  m.class_embeddings =
      m.params.add("embed.E", {cfg.classes + 1, cfg.channels}, std::move(e));
  return m;
}

struct EncodeResult {
  Var z;                         // [D, C]
  std::vector<Var> logdets;      // per block, scalar
  std::vector<Var> cached_inputs;  // graph-cut copies of each block input
  std::vector<BlockTrace> traces;
};

inline EncodeResult encode(const Var& x, const Var& cond,
                           const FlowModel& model) {
  EncodeResult r;
  Var cur = x;
  for (const auto& blk : model.blocks) {
    r.cached_inputs.push_back(cut(cur));
    BlockForward f = block_forward(cur, cond, blk);
    r.logdets.push_back(f.logdet);
    r.traces.push_back(std::move(f.trace));
    cur = f.z;
  }
  r.z = cur;
  return r;
}

inline EncodeResult encode(const Var& x, std::size_t label,
                           const FlowModel& model) {
  return encode(x, model.cond(label), model);
}

// Mean negative log-likelihood per dimension, in nats, including the
// Gaussian normalizer so values are comparable across shapes.
inline Var nf_loss(const EncodeResult& enc) {
  const double n = double(numel(enc.z.shape()));
  Var sq = affine(sumv(mul(enc.z, enc.z)), 0.5, 0.5 * n * kLog2Pi);
  Var ld = Var::scalar(0.0);
  for (const auto& l : enc.logdets) ld = add(ld, l);
  Var loss = affine(sub(sq, ld), 1.0 / n, 0.0);
  if (!std::isfinite(loss.item()))
    throw GraphError("nf_loss: non-finite loss");
  return loss;
}

// Exact log p(x | cond), total nats (not per-dim).
inline Var log_likelihood(const Var& x, const Var& cond,
                          const FlowModel& model) {
  EncodeResult enc = encode(x, cond, model);
  const double n = double(numel(enc.z.shape()));
  return affine(nf_loss(enc), -n, 0.0);
}

inline std::vector<double> add_noise(const std::vector<double>& x,
                                     double sigma_noise, DetRng& rng) {
  if (sigma_noise < 0.0) throw GraphError("add_noise: sigma_noise < 0");
  std::vector<double> out = x;
  if (sigma_noise == 0.0) return out;
  for (auto& v : out) v += sigma_noise * rng.normal();
  return out;
}

// x_hat = x_tilde + sigma^2 * grad_x log p(x_tilde | cond).
inline std::vector<double> score_denoise(const std::vector<double>& x_tilde,
                                         const Var& cond,
                                         const FlowModel& model) {
  if (!(model.sigma_noise > 0.0))
    throw GraphError("score_denoise: model sigma_noise must be positive");
  Var x = Var::leaf({model.D, model.C}, x_tilde, true);
  Var logp = log_likelihood(x, cond, model);
  Gradients g = backward(logp);
  const auto& gx = g.at(x);
  const double s2 = model.sigma_noise * model.sigma_noise;
  std::vector<double> out(x_tilde.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(gx[i]))
      throw GraphError("score_denoise: non-finite score");
    out[i] = x_tilde[i] + s2 * gx[i];
  }
  return out;
}

inline std::vector<double> score_denoise(const std::vector<double>& x_tilde,
                                         std::size_t label,
                                         const FlowModel& model) {
  return score_denoise(x_tilde, model.cond(label), model);
}

namespace detail {

// Sequential inverse of one block with classifier-free guidance:
// per token, mu_g = mu_u + w (mu_c - mu_u), log sigma_g likewise. w == 1
// takes the conditional path verbatim so guidance is exactly neutral.
inline Var invert_block_guided(const Var& z, const Var& cond_c,
                               const Var& cond_u, double w,
                               const FlowBlock& blk) {
  const std::size_t d = blk.D, c = blk.C;
  std::vector<Var> rows;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<Var> ctx_rows;
    for (const auto& r : rows) ctx_rows.push_back(cut(r));
    ctx_rows.push_back(Var::zeros({d - rows.size(), c}));
    Var ctx = concat_rows(ctx_rows);
    BlockTrace tc = param_net_ordered(ctx, cond_c, blk);
    Var mu = slice_rows(tc.mu, i, i + 1);
    Var ls = slice_rows(tc.log_sigma, i, i + 1);
    if (w != 1.0) {
      BlockTrace tu = param_net_ordered(ctx, cond_u, blk);
      Var mu_u = slice_rows(tu.mu, i, i + 1);
      Var ls_u = slice_rows(tu.log_sigma, i, i + 1);
      mu = add(mu_u, affine(sub(mu, mu_u), w, 0.0));
      ls = add(ls_u, affine(sub(ls, ls_u), w, 0.0));
    }
    Var z_i = slice_rows(z, i, i + 1);
    rows.push_back(add(mu, mul(vexp(ls), z_i)));
  }
  return permute_rows(concat_rows(rows), blk.inv_pi);
}

}  // namespace detail

// Draw z from the seeded standard normal and invert the stack block by
// block (reverse stack order). cfg_scale w = 1 is plain conditional
// sampling, bit-identical to the conditional path.
inline std::vector<double> sample(std::size_t label, double cfg_scale,
                                  const FlowModel& model, DetRng& rng,
                                  bool denoise) {
  std::vector<double> zv(model.D * model.C);
  for (auto& v : zv) v = rng.normal();
  Var cur = Var::constant({model.D, model.C}, std::move(zv));
  Var cond_c = cut(model.cond(label));
  Var cond_u = cut(model.cond(FlowModel::kNull));
  for (std::size_t t = model.blocks.size(); t-- > 0;) {
    cur = cut(detail::invert_block_guided(cur, cond_c, cond_u, cfg_scale,
                                          model.blocks[t]));
  }
  std::vector<double> out = cur.data();
  if (denoise) out = score_denoise(out, label, model);
  return out;
}

}  // namespace flowback
