#pragma once

// Reverse-mode automatic differentiation on dense float64 tensors.
// Graphs are per-computation: ops record parent edges only when an input
// requires grad, backward() walks the tape once and the whole graph is
// released when the owning Vars go out of scope.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace flowback {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void op_error(const char* op, const std::string& detail) {
  throw GraphError(std::string("op '") + op + "': " + detail);
}

namespace detail {
// Live-node instrumentation, used by the throughput benchmark as a proxy
// for peak graph memory.
inline std::atomic<long>& live_nodes() {
  static std::atomic<long> n{0};
  return n;
}
inline std::atomic<long>& peak_nodes() {
  static std::atomic<long> n{0};
  return n;
}
inline void node_created() {
  long cur = ++live_nodes();
  long prev = peak_nodes().load();
  while (cur > prev && !peak_nodes().compare_exchange_weak(prev, cur)) {
  }
}
inline void node_destroyed() { --live_nodes(); }
}  // namespace detail

inline long live_node_count() { return detail::live_nodes().load(); }
inline long peak_node_count() { return detail::peak_nodes().load(); }
inline void reset_peak_node_count() {
  detail::peak_nodes().store(detail::live_nodes().load());
}

struct Node {
  const char* op = "leaf";
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Called with the gradient of the loss w.r.t. this node's value and one
  // accumulation buffer per parent (nullptr when that parent needs no grad).
  std::function<void(const double*, const std::vector<double*>&)> backprop;

  Node() { detail::node_created(); }
  ~Node() { detail::node_destroyed(); }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Var leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    if (data.size() != numel(shape))
      op_error("leaf", "data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), false);
  }
  static Var scalar(double v) { return constant({}, {v}); }
  static Var zeros(Shape shape) {
    std::vector<double> d(numel(shape), 0.0);
    return constant(std::move(shape), std::move(d));
  }

  bool defined() const { return n_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return n_; }
  const Shape& shape() const { return n_->shape; }
  const std::vector<double>& data() const { return n_->value; }
  std::vector<double>& mutable_data() { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }
  bool has_parents() const { return !n_->parents.empty(); }
  std::size_t size() const { return n_->value.size(); }
  double item() const {
    if (n_->value.size() != 1) op_error("item", "value is not scalar");
    return n_->value[0];
  }
  std::size_t rows() const { return n_->shape.size() == 2 ? n_->shape[0] : 1; }
  std::size_t cols() const {
    return n_->shape.empty() ? 1 : n_->shape.back();
  }

 private:
  std::shared_ptr<Node> n_;
};

inline Var make_node(const char* op, Shape shape, std::vector<double> value,
                     const std::vector<Var>& inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& v : inputs) rg = rg || v.node()->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& v : inputs) n->parents.push_back(v.node());
  }
  return Var(std::move(n));
}

// ---------------------------------------------------------------------------
// Graph cut (stop-gradient).

inline Var cut(const Var& v) {
  auto n = std::make_shared<Node>();
  n->op = "cut";
  n->shape = v.shape();
  n->value = v.data();
  n->requires_grad = false;
  return Var(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with scalar / row-vector broadcast.

namespace detail {

struct BcastPlan {
  Shape out_shape;
  std::size_t n;
  // maps flat output index -> operand index
  std::size_t a_mod, a_div;  // idx_a = (i / a_div) % a_mod when a_mod>0 else i
  std::size_t b_mod, b_div;
  bool a_full, b_full;
};

inline std::size_t map_idx(std::size_t i, bool full, std::size_t mod,
                           std::size_t div) {
  if (full) return i;
  if (mod == 0) return 0;  // scalar
  return (i / div) % mod;  // row vector over trailing dim
}

inline BcastPlan bcast_plan(const char* op, const Shape& a, const Shape& b) {
  BcastPlan p{};
  const std::size_t na = numel(a), nb = numel(b);
  if (a == b) {
    p.out_shape = a;
    p.a_full = p.b_full = true;
  } else if (nb == 1) {
    p.out_shape = a;
    p.a_full = true;
    p.b_full = false;
    p.b_mod = 0;
  } else if (na == 1) {
    p.out_shape = b;
    p.b_full = true;
    p.a_full = false;
    p.a_mod = 0;
  } else if (a.size() == 2 && b.size() == 2 && b[0] == 1 && b[1] == a[1]) {
    p.out_shape = a;
    p.a_full = true;
    p.b_full = false;
    p.b_mod = a[1];
    p.b_div = 1;
  } else {
    op_error(op, "incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
  }
  p.n = numel(p.out_shape);
  return p;
}

template <class Fwd, class Da, class Db>
Var binary_ew(const char* name, const Var& a, const Var& b, Fwd f, Da da,
              Db db) {
  auto plan = bcast_plan(name, a.shape(), b.shape());
  std::vector<double> out(plan.n);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < plan.n; ++i) {
    out[i] = f(av[map_idx(i, plan.a_full, plan.a_mod, plan.a_div)],
               bv[map_idx(i, plan.b_full, plan.b_mod, plan.b_div)]);
  }
  Var r = make_node(name, plan.out_shape, std::move(out), {a, b});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, plan, da, db](const double* g,
                                              const std::vector<double*>& pg) {
      const auto& av = self->parents[0]->value;
      const auto& bv = self->parents[1]->value;
      for (std::size_t i = 0; i < plan.n; ++i) {
        const std::size_t ia = map_idx(i, plan.a_full, plan.a_mod, plan.a_div);
        const std::size_t ib = map_idx(i, plan.b_full, plan.b_mod, plan.b_div);
        if (pg[0]) pg[0][ia] += da(av[ia], bv[ib]) * g[i];
        if (pg[1]) pg[1][ib] += db(av[ia], bv[ib]) * g[i];
      }
    };
  }
  return r;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary_ew(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
  return detail::binary_ew(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
  return detail::binary_ew(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}
inline Var div(const Var& a, const Var& b) {
  return detail::binary_ew(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// y = k*x + c, elementwise with constants.
inline Var affine(const Var& x, double k, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x.data()[i] + c;
  Var r = make_node("affine", x.shape(), std::move(out), {x});
  if (r.requires_grad()) {
    const std::size_t n = r.size();
    r.node()->backprop = [k, n](const double* g,
                                const std::vector<double*>& pg) {
      if (pg[0])
        for (std::size_t i = 0; i < n; ++i) pg[0][i] += k * g[i];
    };
  }
  return r;
}

inline Var neg(const Var& x) { return affine(x, -1.0, 0.0); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.

namespace detail {
template <class Fwd, class Dx>
Var unary_ew(const char* name, const Var& x, Fwd f, Dx dx) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
  Var r = make_node(name, x.shape(), std::move(out), {x});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, dx](const double* g,
                                    const std::vector<double*>& pg) {
      if (!pg[0]) return;
      const auto& xv = self->parents[0]->value;
      const auto& yv = self->value;
      for (std::size_t i = 0; i < xv.size(); ++i)
        pg[0][i] += dx(xv[i], yv[i]) * g[i];
    };
  }
  return r;
}
}  // namespace detail

inline Var vexp(const Var& x) {
  return detail::unary_ew(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}
inline Var vlog(const Var& x) {
  return detail::unary_ew(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}
inline Var clampv(const Var& x, double lo, double hi) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, x.data()[i]));
  Var r = make_node("clamp", x.shape(), std::move(out), {x});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, lo, hi](const double* g,
                                        const std::vector<double*>& pg) {
      if (!pg[0]) return;
      const auto& xv = self->parents[0]->value;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > lo && xv[i] < hi) pg[0][i] += g[i];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reductions.

inline Var sumv(const Var& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Var r = make_node("sum", {}, {s}, {x});
  if (r.requires_grad()) {
    const std::size_t n = x.size();
    r.node()->backprop = [n](const double* g, const std::vector<double*>& pg) {
      if (pg[0])
        for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[0];
    };
  }
  return r;
}

inline Var meanv(const Var& x) {
  if (x.size() == 0) op_error("mean", "empty input");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.size();
  Var r = make_node("mean", {}, {s / double(n)}, {x});
  if (r.requires_grad()) {
    r.node()->backprop = [n](const double* g, const std::vector<double*>& pg) {
      if (pg[0]) {
        const double gi = g[0] / double(n);
        for (std::size_t i = 0; i < n; ++i) pg[0][i] += gi;
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Matrix products.

namespace detail {
inline void require_rank2(const char* op, const Var& v) {
  if (v.shape().size() != 2)
    op_error(op, "expected rank-2 tensor, got " + shape_str(v.shape()));
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    op_error("matmul", "inner dims disagree: " + shape_str(a.shape()) +
                           " x " + shape_str(b.shape()));
  const std::size_t n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  Var r = make_node("matmul", {m, n}, std::move(out), {a, b});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, m, k, n](const double* g,
                                         const std::vector<double*>& pg) {
      const auto& av = self->parents[0]->value;
      const auto& bv = self->parents[1]->value;
      if (pg[0]) {  // dA = G B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              s += g[i * n + j] * bv[p * n + j];
            pg[0][i * k + p] += s;
          }
      }
      if (pg[1]) {  // dB = A^T G
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              s += av[i * k + p] * g[i * n + j];
            pg[1][p * n + j] += s;
          }
      }
    };
  }
  return r;
}

// A * B^T without materializing the transpose.
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::require_rank2("matmul_nt", a);
  detail::require_rank2("matmul_nt", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[1] != k)
    op_error("matmul_nt", "inner dims disagree: " + shape_str(a.shape()) +
                              " x " + shape_str(b.shape()) + "^T");
  const std::size_t n = b.shape()[0];
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = s;
    }
  Var r = make_node("matmul_nt", {m, n}, std::move(out), {a, b});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, m, k, n](const double* g,
                                         const std::vector<double*>& pg) {
      const auto& av = self->parents[0]->value;
      const auto& bv = self->parents[1]->value;
      if (pg[0]) {  // dA = G B
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              s += g[i * n + j] * bv[j * k + p];
            pg[0][i * k + p] += s;
          }
      }
      if (pg[1]) {  // dB = G^T A
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              s += g[i * n + j] * av[i * k + p];
            pg[1][j * k + p] += s;
          }
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Structural ops.

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) op_error("concat", "no inputs");
  std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat", p);
    if (p.shape()[1] != cols)
      op_error("concat", "column mismatch: " + shape_str(p.shape()));
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  Var r = make_node("concat", {rows, cols}, std::move(out), parts);
  if (r.requires_grad()) {
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.size());
    r.node()->backprop = [sizes](const double* g,
                                 const std::vector<double*>& pg) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
        if (pg[pi])
          for (std::size_t i = 0; i < sizes[pi]; ++i) pg[pi][i] += g[off + i];
        off += sizes[pi];
      }
    };
  }
  return r;
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) op_error("concat", "no inputs");
  const std::size_t rows = parts[0].shape().size() == 2 ? parts[0].shape()[0] : 0;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat", p);
    if (p.shape()[0] != rows)
      op_error("concat", "row mismatch: " + shape_str(p.shape()));
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * cols + off + j] = p.data()[i * w + j];
    off += w;
  }
  Var r = make_node("concat", {rows, cols}, std::move(out), parts);
  if (r.requires_grad()) {
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.shape()[1]);
    r.node()->backprop = [widths, rows, cols](const double* g,
                                              const std::vector<double*>& pg) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < widths.size(); ++pi) {
        const std::size_t w = widths[pi];
        if (pg[pi])
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < w; ++j)
              pg[pi][i * w + j] += g[i * cols + off + j];
        off += w;
      }
    };
  }
  return r;
}

inline Var slice_rows(const Var& x, std::size_t r0, std::size_t r1) {
  detail::require_rank2("slice", x);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (r0 > r1 || r1 > rows)
    op_error("slice", "row range out of bounds for " + shape_str(x.shape()));
  std::vector<double> out(x.data().begin() + r0 * cols,
                          x.data().begin() + r1 * cols);
  Var r = make_node("slice", {r1 - r0, cols}, std::move(out), {x});
  if (r.requires_grad()) {
    r.node()->backprop = [r0, cols, n = (r1 - r0) * cols](
                             const double* g, const std::vector<double*>& pg) {
      if (pg[0])
        for (std::size_t i = 0; i < n; ++i) pg[0][r0 * cols + i] += g[i];
    };
  }
  return r;
}

inline Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
  detail::require_rank2("slice", x);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (c0 > c1 || c1 > cols)
    op_error("slice", "col range out of bounds for " + shape_str(x.shape()));
  const std::size_t w = c1 - c0;
  std::vector<double> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out[i * w + j] = x.data()[i * cols + c0 + j];
  Var r = make_node("slice", {rows, w}, std::move(out), {x});
  if (r.requires_grad()) {
    r.node()->backprop = [rows, cols, c0, w](const double* g,
                                             const std::vector<double*>& pg) {
      if (pg[0])
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j)
            pg[0][i * cols + c0 + j] += g[i * w + j];
    };
  }
  return r;
}

// out[i, :] = x[perm[i], :]
inline Var permute_rows(const Var& x, const std::vector<std::size_t>& perm) {
  detail::require_rank2("permute", x);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (perm.size() != rows)
    op_error("permute", "permutation size " + std::to_string(perm.size()) +
                            " != rows of " + shape_str(x.shape()));
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (perm[i] >= rows) op_error("permute", "index out of range");
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = x.data()[perm[i] * cols + j];
  }
  Var r = make_node("permute", {rows, cols}, std::move(out), {x});
  if (r.requires_grad()) {
    r.node()->backprop = [perm, rows, cols](const double* g,
                                            const std::vector<double*>& pg) {
      if (pg[0])
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            pg[0][perm[i] * cols + j] += g[i * cols + j];
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Masked softmax over rows (the attention primitive). Masked-out entries get
// probability zero and pass no gradient.

inline Var masked_softmax_rows(const Var& x, const std::vector<uint8_t>& mask) {
  detail::require_rank2("masked_softmax", x);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (mask.size() != rows * cols)
    op_error("masked_softmax", "mask size does not match " +
                                   shape_str(x.shape()));
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (mask[i * cols + j]) mx = std::max(mx, x.data()[i * cols + j]);
    if (!std::isfinite(mx))
      op_error("masked_softmax", "row " + std::to_string(i) +
                                     " has no unmasked entries");
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (mask[i * cols + j]) {
        out[i * cols + j] = std::exp(x.data()[i * cols + j] - mx);
        z += out[i * cols + j];
      }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= z;
  }
  Var r = make_node("masked_softmax", {rows, cols}, std::move(out), {x});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, mask, rows, cols](
                             const double* g, const std::vector<double*>& pg) {
      if (!pg[0]) return;
      const auto& y = self->value;
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
          dot += y[i * cols + j] * g[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          if (mask[i * cols + j])
            pg[0][i * cols + j] +=
                y[i * cols + j] * (g[i * cols + j] - dot);
      }
    };
  }
  return r;
}

inline Var softmax_rows(const Var& x) {
  detail::require_rank2("softmax", x);
  return masked_softmax_rows(x, std::vector<uint8_t>(x.size(), 1));
}

// ---------------------------------------------------------------------------
// Row-wise cosine similarity, guarded at zero norm (similarity 0, no grad).

inline Var cosine_rows(const Var& a, const Var& b) {
  detail::require_rank2("cosine", a);
  if (a.shape() != b.shape())
    op_error("cosine", "shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  constexpr double kEps = 1e-12;
  std::vector<double> out(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = a.data()[i * cols + j], y = b.data()[i * cols + j];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    out[i] = (na < kEps || nb < kEps) ? 0.0 : dot / (na * nb);
  }
  Var r = make_node("cosine", {rows}, std::move(out), {a, b});
  if (r.requires_grad()) {
    Node* self = r.node().get();
    r.node()->backprop = [self, rows, cols](const double* g,
                                            const std::vector<double*>& pg) {
      const auto& av = self->parents[0]->value;
      const auto& bv = self->parents[1]->value;
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double x = av[i * cols + j], y = bv[i * cols + j];
          dot += x * y;
          na2 += x * x;
          nb2 += y * y;
        }
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        if (na < kEps || nb < kEps) continue;
        const double s = dot / (na * nb);
        for (std::size_t j = 0; j < cols; ++j) {
          const double x = av[i * cols + j], y = bv[i * cols + j];
          if (pg[0]) pg[0][i * cols + j] += g[i] * (y / (na * nb) - s * x / na2);
          if (pg[1]) pg[1][i * cols + j] += g[i] * (x / (na * nb) - s * y / nb2);
        }
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Composite nonlinearities, built from the primitive vocabulary.

inline Var sigmoidv(const Var& x) {
  // 1 / (1 + exp(-x))
  Var e = vexp(affine(x, -1.0, 0.0));
  return div(Var::scalar(1.0), affine(e, 1.0, 1.0));
}

inline Var silu(const Var& x) { return mul(x, sigmoidv(x)); }

inline Var tanhv(const Var& x) {
  Var e = vexp(affine(x, 2.0, 0.0));
  return div(affine(e, 1.0, -1.0), affine(e, 1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Backward pass.

class Gradients {
 public:
  bool has(const Var& v) const { return g_.count(v.node().get()) != 0; }
  const std::vector<double>& at(const Var& v) const {
    auto it = g_.find(v.node().get());
    if (it == g_.end())
      throw GraphError("no gradient recorded for requested value");
    return it->second;
  }
  const std::vector<double>* find(const Var& v) const {
    auto it = g_.find(v.node().get());
    return it == g_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return g_.size(); }

  std::unordered_map<const Node*, std::vector<double>>& table() { return g_; }
  const std::unordered_map<const Node*, std::vector<double>>& table() const {
    return g_;
  }

 private:
  friend Gradients backward(const Var&);
  std::unordered_map<const Node*, std::vector<double>> g_;
  std::shared_ptr<Node> keep_;
};

inline Gradients backward(const Var& loss) {
  if (numel(loss.shape()) != 1)
    throw GraphError("backward: loss must be scalar, got shape " +
                     shape_str(loss.shape()));
  Gradients out;
  out.keep_ = loss.node();
  if (!loss.node()->requires_grad) return out;

  // Deterministic iterative post-order topological sort.
  std::vector<Node*> order;
  struct Frame {
    Node* n;
    std::size_t pi;
  };
  std::vector<Frame> stack{{loss.node().get(), 0}};
  std::unordered_map<Node*, char> mark;
  mark[loss.node().get()] = 1;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.pi < f.n->parents.size()) {
      Node* p = f.n->parents[f.pi++].get();
      if (p->requires_grad && !mark.count(p)) {
        mark[p] = 1;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  auto& g = out.table();
  g[loss.node().get()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto git = g.find(n);
    if (git == g.end() || !n->backprop) continue;
    // Copy out: inserting parent buffers below may rehash the map and
    // invalidate the iterator.
    const std::vector<double> gn = git->second;
    std::vector<double*> pg(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto& buf = g[p];
      if (buf.size() != numel(p->shape)) buf.assign(numel(p->shape), 0.0);
      pg[i] = buf.data();
    }
    n->backprop(gn.data(), pg);
  }
  return out;
}

}  // namespace flowback
