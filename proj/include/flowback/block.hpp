#pragma once

// One autoregressive affine flow block: a causal-attention parameter
// network producing per-token (mu, log sigma), the forward/inverse affine
// transforms, and the triangular log-determinant.

#include <cstddef>
#include <vector>

#include "flowback/graph.hpp"
#include "flowback/params.hpp"
#include "flowback/rng.hpp"

namespace flowback {

struct Ordering {
  std::vector<std::size_t> pi;

  static Ordering identity(std::size_t d) {
    Ordering o;
    o.pi.resize(d);
    for (std::size_t i = 0; i < d; ++i) o.pi[i] = i;
    return o;
  }
  static Ordering reversal(std::size_t d) {
    Ordering o;
    o.pi.resize(d);
    for (std::size_t i = 0; i < d; ++i) o.pi[i] = d - 1 - i;
    return o;
  }
  std::vector<std::size_t> inverse() const {
    std::vector<std::size_t> inv(pi.size());
    std::vector<uint8_t> seen(pi.size(), 0);
    for (std::size_t i = 0; i < pi.size(); ++i) {
      if (pi[i] >= pi.size() || seen[pi[i]])
        throw GraphError("ordering is not a permutation");
      seen[pi[i]] = 1;
      inv[pi[i]] = i;
    }
    return inv;
  }
};

struct AttnLayer {
  Var wq, wk, wv, wo;  // [C, C]
  Var w1, b1, w2, b2;  // ff: [C, H], [1, H], [H, C], [1, C]
};

struct FlowBlock {
  Ordering ordering;
  std::vector<std::size_t> inv_pi;
  Var start;  // [1, C] params for ordering position 0
  Var pos;    // [D + 1, C] learned positions (slot 0 = conditioning token)
  std::vector<AttnLayer> layers;
  Var out_w, out_b;  // [C, 2C], [1, 2C] -> (mu, s)
  std::size_t D = 0, C = 0, heads = 1;
  static constexpr double kClampLo = -7.0, kClampHi = 7.0;
};

struct BlockTrace {
  std::vector<Var> hidden;  // per layer, [D, C]
  Var mu, log_sigma, sigma;  // [D, C], in ordering space
};

struct BlockForward {
  Var z;       // [D, C], ordering space
  Var logdet;  // scalar
  BlockTrace trace;
};

namespace detail {

inline std::vector<uint8_t> causal_mask(std::size_t s) {
  std::vector<uint8_t> m(s * s, 0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * s + j] = 1;
  return m;
}

inline Var attention(const Var& h, const AttnLayer& layer, std::size_t heads,
                     const std::vector<uint8_t>& mask) {
  const std::size_t c = h.shape()[1];
  Var q = matmul(h, layer.wq);
  Var k = matmul(h, layer.wk);
  Var v = matmul(h, layer.wv);
  std::vector<Var> outs;
  const std::size_t dh = c / heads;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = heads == 1 ? q : slice_cols(q, hd * dh, (hd + 1) * dh);
    Var kh = heads == 1 ? k : slice_cols(k, hd * dh, (hd + 1) * dh);
    Var vh = heads == 1 ? v : slice_cols(v, hd * dh, (hd + 1) * dh);
    Var scores = affine(matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)), 0.0);
    Var att = masked_softmax_rows(scores, mask);
    outs.push_back(matmul(att, vh));
  }
  Var o = heads == 1 ? outs[0] : concat_cols(outs);
  return matmul(o, layer.wo);
}

}  // namespace detail

// Parameter network over a context already in ordering space. Row d of the
// returned (mu, sigma) depends only on context rows < d, the conditioning
// token, and the learned start token.
inline BlockTrace param_net_ordered(const Var& xo_ctx, const Var& cond,
                                    const FlowBlock& blk) {
  const std::size_t d = blk.D, c = blk.C;
  if (xo_ctx.shape() != Shape{d, c})
    op_error("param_net", "context shape " + shape_str(xo_ctx.shape()) +
                              " does not match block geometry [" +
                              std::to_string(d) + "," + std::to_string(c) +
                              "]");
  if (cond.shape() != Shape{1, c})
    op_error("param_net", "conditioning token shape " +
                              shape_str(cond.shape()) + " != [1," +
                              std::to_string(c) + "]");
  // Shifted sequence: [cond, start, xo_0 .. xo_{D-2}].
  Var seq = concat_rows({cond, blk.start, slice_rows(xo_ctx, 0, d - 1)});
  seq = add(seq, blk.pos);
  const auto mask = detail::causal_mask(d + 1);

  BlockTrace tr;
  Var h = seq;
  for (const auto& layer : blk.layers) {
    h = add(h, detail::attention(h, layer, blk.heads, mask));
    Var u = silu(add(matmul(h, layer.w1), layer.b1));
    h = add(h, add(matmul(u, layer.w2), layer.b2));
    tr.hidden.push_back(slice_rows(h, 1, d + 1));
  }
  Var out = slice_rows(add(matmul(h, blk.out_w), blk.out_b), 1, d + 1);
  tr.mu = slice_cols(out, 0, c);
  tr.log_sigma =
      clampv(slice_cols(out, c, 2 * c), FlowBlock::kClampLo, FlowBlock::kClampHi);
  tr.sigma = vexp(tr.log_sigma);
  return tr;
}

inline BlockTrace param_net(const Var& x_ctx, const Var& cond,
                            const FlowBlock& blk) {
  return param_net_ordered(permute_rows(x_ctx, blk.ordering.pi), cond, blk);
}

// z_d = (x_{pi(d)} - mu_d) / sigma_d; output stays in ordering space, so a
// zero-initialized block is exactly the token permutation.
inline BlockForward block_forward(const Var& x, const Var& cond,
                                  const FlowBlock& blk) {
  for (double v : x.data())
    if (!std::isfinite(v)) op_error("block_forward", "non-finite input");
  BlockForward r;
  r.trace = param_net(x, cond, blk);
  for (double s : r.trace.sigma.data())
    if (!std::isfinite(s) || s <= 0.0)
      op_error("block_forward", "non-finite or non-positive sigma");
  Var xo = permute_rows(x, blk.ordering.pi);
  r.z = div(sub(xo, r.trace.mu), r.trace.sigma);
  r.logdet = neg(sumv(r.trace.log_sigma));
  return r;
}

// Sequential inverse: one token at a time, each conditioned on a graph-cut
// copy of the previously generated tokens (numerically the exact inverse of
// block_forward). Returns x in token space.
inline Var block_inverse_sequential(const Var& z, const Var& cond,
                                    const FlowBlock& blk) {
  const std::size_t d = blk.D, c = blk.C;
  if (z.shape() != Shape{d, c})
    op_error("block_inverse", "z shape " + shape_str(z.shape()) +
                                  " does not match block geometry");
  std::vector<Var> rows;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<Var> ctx_rows;
    for (const auto& r : rows) ctx_rows.push_back(cut(r));
    if (rows.size() < d) ctx_rows.push_back(Var::zeros({d - rows.size(), c}));
    BlockTrace tr = param_net_ordered(concat_rows(ctx_rows), cond, blk);
    Var mu_i = slice_rows(tr.mu, i, i + 1);
    Var sg_i = slice_rows(tr.sigma, i, i + 1);
    Var z_i = slice_rows(z, i, i + 1);
    rows.push_back(add(mu_i, mul(sg_i, z_i)));
  }
  return permute_rows(concat_rows(rows), blk.inv_pi);
}

struct BlockInverse {
  Var x;  // token space
  BlockTrace trace;
};

// Accelerated (pseudo-reverse) inverse: (mu, sigma) come from one parallel
// parameter-network pass over the graph-cut cached forward input, so the
// whole token dimension inverts at once. When capture_trace is set, a
// second, live parameter-network pass over the produced output supplies the
// alignment features; that pass is what lets alignment gradients flow into
// this block's input z and hence into all stack-subsequent blocks.
inline BlockInverse block_inverse_cached(const Var& z, const Var& cached_ctx,
                                         const Var& cond, const FlowBlock& blk,
                                         bool capture_trace = true) {
  if (cached_ctx.has_parents() || cached_ctx.requires_grad())
    op_error("block_inverse_cached",
             "cached context must be graph-cut (no parents, no grad)");
  BlockTrace cache_tr = param_net(cached_ctx, cond, blk);
  Var xo = add(cache_tr.mu, mul(cache_tr.sigma, z));
  BlockInverse r;
  r.x = permute_rows(xo, blk.inv_pi);
  r.trace = capture_trace ? param_net(r.x, cond, blk) : cache_tr;
  return r;
}

// Naive sequential counterpart of block_inverse_cached, used as the
// reference in equivalence checks and the throughput benchmark: identical
// graph semantics, built one token at a time.
inline BlockInverse block_inverse_naive(const Var& z, const Var& cond,
                                        const FlowBlock& blk,
                                        bool capture_trace = true) {
  BlockInverse r;
  r.x = block_inverse_sequential(z, cond, blk);
  if (capture_trace) r.trace = param_net(r.x, cond, blk);
  return r;
}

// Registers a freshly initialized block's parameters under
// "block.<idx>.*". The output head starts at zero, making the block the
// identity transform up to its ordering.
inline FlowBlock make_block(std::size_t idx, std::size_t d, std::size_t c,
                            std::size_t n_layers, std::size_t heads,
                            std::size_t ff_hidden, const Ordering& ordering,
                            ParamSet& params, DetRng& rng,
                            double init_scale = 0.3) {
  if (heads == 0 || c % heads != 0)
    throw GraphError("head count must divide channel dim");
  FlowBlock blk;
  blk.D = d;
  blk.C = c;
  blk.heads = heads;
  blk.ordering = ordering;
  blk.inv_pi = ordering.inverse();
  const std::string base = "block." + std::to_string(idx) + ".";

  auto randn = [&](Shape shape, double scale) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return v;
  };
  blk.start = params.add(base + "start", {1, c}, randn({1, c}, init_scale));
  blk.pos = params.add(base + "pos", {d + 1, c}, randn({d + 1, c}, init_scale));
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string lb = base + "layer." + std::to_string(l) + ".";
    AttnLayer layer;
    const double ws = init_scale / std::sqrt(double(c));
    layer.wq = params.add(lb + "wq", {c, c}, randn({c, c}, ws));
    layer.wk = params.add(lb + "wk", {c, c}, randn({c, c}, ws));
    layer.wv = params.add(lb + "wv", {c, c}, randn({c, c}, ws));
    layer.wo = params.add(lb + "wo", {c, c}, randn({c, c}, ws));
    layer.w1 = params.add(lb + "w1", {c, ff_hidden},
                          randn({c, ff_hidden}, init_scale / std::sqrt(double(c))));
    layer.b1 = params.add(lb + "b1", {1, ff_hidden},
                          std::vector<double>(ff_hidden, 0.0));
    layer.w2 = params.add(
        lb + "w2", {ff_hidden, c},
        randn({ff_hidden, c}, init_scale / std::sqrt(double(ff_hidden))));
    layer.b2 = params.add(lb + "b2", {1, c}, std::vector<double>(c, 0.0));
    blk.layers.push_back(layer);
  }
  blk.out_w =
      params.add(base + "out_w", {c, 2 * c}, std::vector<double>(c * 2 * c, 0.0));
  blk.out_b =
      params.add(base + "out_b", {1, 2 * c}, std::vector<double>(2 * c, 0.0));
  return blk;
}

}  // namespace flowback
