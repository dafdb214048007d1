#pragma once

// Reverse-mode automatic differentiation over NdArray.
//
// Every op returns a Var wrapping a Node. When at least one input requires a
// gradient, the node keeps its parents and a closure that pushes the node's
// gradient back into theirs. backward() walks the graph in reverse
// topological order. Graphs are DAGs by construction: a node can only refer
// to nodes that existed before it.

#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seldiff/error.hpp"
#include "seldiff/ndarray.hpp"

namespace seldiff::ad {

struct Node {
  NdArray value;
  NdArray grad;
  bool requires_grad = false;
  bool has_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  NdArray& grad_buffer() {
    if (!has_grad) {
      grad = NdArray(value.shape(), 0.0);
      has_grad = true;
    }
    return grad;
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}  // namespace detail

/// While alive, ops on this thread build no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

class Var {
 public:
  Var() : node_(std::make_shared<Node>()) {}
  explicit Var(NdArray value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var param(NdArray value) { return Var(std::move(value), true); }
  static Var constant(NdArray value) { return Var(std::move(value), false); }

  const NdArray& value() const { return node_->value; }
  /// Only for leaves, e.g. the optimizer writing updated parameters.
  NdArray& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  /// Accumulated gradient, or zeros when backward never reached this node.
  NdArray grad() const {
    return node_->has_grad ? node_->grad : NdArray(shape(), 0.0);
  }
  bool has_grad() const { return node_->has_grad; }
  void zero_grad() {
    node_->grad = NdArray();
    node_->has_grad = false;
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

/// Builds the output node; parents and closure are kept only when needed.
inline Var make_op(const char* op, NdArray value, std::initializer_list<Var> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const Var& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var& v : inputs) node->parents.push_back(v.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

inline Var make_op_list(const char* op, NdArray value, const std::vector<Var>& inputs,
                        std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const Var& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var& v : inputs) node->parents.push_back(v.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kShape, op, ": incompatible shapes ", shape_str(a), " and ",
       shape_str(b));
}

// ---------------------------------------------------------------------------
// Broadcasting. Ranks are right-aligned; an axis broadcasts only when its
// extent is 1. Adjacent axes that stay contiguous in both operands are merged
// so the inner loop runs over as many elements as possible.

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> extent;  // coalesced loop extents
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

inline BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));

  BroadcastPlan plan;
  plan.out_shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      plan.out_shape[i] = pa[i];
    } else if (pa[i] == 1) {
      plan.out_shape[i] = pb[i];
    } else {
      shape_error(op, a, b);
    }
  }

  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }

  // Drop unit axes, then merge an outer axis into the next inner one when it
  // is a pure continuation in both operands.
  for (std::size_t i = 0; i < rank; ++i) {
    if (plan.out_shape[i] == 1) continue;
    plan.extent.push_back(plan.out_shape[i]);
    plan.stride_a.push_back(sa[i]);
    plan.stride_b.push_back(sb[i]);
  }
  std::vector<std::size_t> ext, ta, tb;
  for (std::size_t k = 0; k < plan.extent.size(); ++k) {
    if (!ext.empty()) {
      const std::size_t j = ext.size() - 1;
      // plan axis k is inner relative to ext[j]
      if (ta[j] == plan.stride_a[k] * plan.extent[k] &&
          tb[j] == plan.stride_b[k] * plan.extent[k]) {
        ext[j] *= plan.extent[k];
        ta[j] = plan.stride_a[k];
        tb[j] = plan.stride_b[k];
        continue;
      }
    }
    ext.push_back(plan.extent[k]);
    ta.push_back(plan.stride_a[k]);
    tb.push_back(plan.stride_b[k]);
  }
  if (ext.empty()) {
    ext.push_back(1);
    ta.push_back(0);
    tb.push_back(0);
  }
  plan.extent = std::move(ext);
  plan.stride_a = std::move(ta);
  plan.stride_b = std::move(tb);
  return plan;
}

/// Calls fn(out_offset, a_offset, b_offset, n, a_step, b_step) per inner row.
template <typename Fn>
void for_each_row(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.extent.size();
  const std::size_t inner = plan.extent[rank - 1];
  const std::size_t step_a = plan.stride_a[rank - 1];
  const std::size_t step_b = plan.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < rank; ++i) rows *= plan.extent[i];
  std::size_t out = 0, off_a = 0, off_b = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    fn(out, off_a, off_b, inner, step_a, step_b);
    out += inner;
    // advance the odometer over outer axes
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      off_a += plan.stride_a[ax];
      off_b += plan.stride_b[ax];
      if (idx[ax] < plan.extent[ax]) break;
      off_a -= plan.stride_a[ax] * plan.extent[ax];
      off_b -= plan.stride_b[ax] * plan.extent[ax];
      idx[ax] = 0;
    }
  }
}

// ---------------------------------------------------------------------------
// Dense kernels; all row-major.

using vec4 = double __attribute__((vector_size(32)));

inline vec4 load4(const double* p) {
  vec4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void add_store4(double* p, vec4 v) {
  vec4 o = load4(p);
  o += v;
  std::memcpy(p, &o, sizeof o);
}

/// C[M,N] += A[M,K] * B[K,N]. The main body works on 4x16 blocks of C held
/// in registers; leftovers fall back to plain loops.
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  constexpr std::size_t MR = 4;
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    std::size_t i = 0;
    for (; i + MR <= m; i += MR) {
      vec4 acc[MR][4] = {};
      const double* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const vec4 b0 = load4(bp), b1 = load4(bp + 4), b2 = load4(bp + 8), b3 = load4(bp + 12);
        for (std::size_t r = 0; r < MR; ++r) {
          const double av = a0[r * k + p];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
          acc[r][2] += av * b2;
          acc[r][3] += av * b3;
        }
      }
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t q = 0; q < 4; ++q) add_store4(c + (i + r) * n + j + 4 * q, acc[r][q]);
    }
    for (; i < m; ++i) {
      vec4 acc[4] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* bp = b + p * n + j;
        for (std::size_t q = 0; q < 4; ++q) acc[q] += av * load4(bp + 4 * q);
      }
      for (std::size_t q = 0; q < 4; ++q) add_store4(c + i * n + j + 4 * q, acc[q]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    std::size_t i = 0;
    for (; i + 8 <= m; i += 8) {
      vec4 acc[8] = {};
      const double* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const vec4 bv = load4(b + p * n + j);
        for (std::size_t r = 0; r < 8; ++r) acc[r] += a0[r * k + p] * bv;
      }
      for (std::size_t r = 0; r < 8; ++r) add_store4(c + (i + r) * n + j, acc[r]);
    }
    for (; i < m; ++i) {
      vec4 acc = {};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * load4(b + p * n + j);
      add_store4(c + i * n + j, acc);
    }
  }
  if (j < n) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* brow = b + p * n;
        for (std::size_t q = j; q < n; ++q) crow[q] += av * brow[q];
      }
    }
  }
}

/// dst[c, r] = src[r, c] for a rows x cols matrix.
inline void transpose_into(std::size_t rows, std::size_t cols, const double* __restrict src,
                           double* __restrict dst) {
  constexpr std::size_t TB = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += TB)
    for (std::size_t c0 = 0; c0 < cols; c0 += TB)
      for (std::size_t r = r0; r < std::min(rows, r0 + TB); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + TB); ++c) dst[c * rows + r] = src[r * cols + c];
}

/// C[M,K] += A[M,N] * B[K,N]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  if (m * n * k <= 512) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t q = 0; q < k; ++q) {
        double s = 0.0;
        for (std::size_t p = 0; p < n; ++p) s += a[i * n + p] * b[q * n + p];
        c[i * k + q] += s;
      }
    return;
  }
  std::vector<double> bt(n * k);
  transpose_into(k, n, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

/// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c) {
  if (m * n * k <= 512) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        for (std::size_t q = 0; q < n; ++q) c[p * n + q] += av * b[i * n + q];
      }
    return;
  }
  std::vector<double> at(m * k);
  transpose_into(m, k, a, at.data());
  gemm_nn(k, m, n, at.data(), b, c);
}

inline void accumulate(NdArray& dst, const NdArray& src) {
  double* d = dst.data().data();
  const double* s = src.data().data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with size-1 broadcasting.

inline Var add(const Var& a, const Var& b) {
  auto plan = detail::plan_broadcast("add", a.shape(), b.shape());
  NdArray out(plan.out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  double* po = out.data().data();
  detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                 std::size_t n, std::size_t sa, std::size_t sb) {
    for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[ia + j * sa] + pb[ib + j * sb];
  });
  return detail::make_op("add", std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data().data();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    double* ga = na.requires_grad ? na.grad_buffer().data().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
    detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                   std::size_t n, std::size_t sa, std::size_t sb) {
      if (ga) for (std::size_t j = 0; j < n; ++j) ga[ia + j * sa] += g[o + j];
      if (gb) for (std::size_t j = 0; j < n; ++j) gb[ib + j * sb] += g[o + j];
    });
  });
}

inline Var sub(const Var& a, const Var& b) {
  auto plan = detail::plan_broadcast("sub", a.shape(), b.shape());
  NdArray out(plan.out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  double* po = out.data().data();
  detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                 std::size_t n, std::size_t sa, std::size_t sb) {
    for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[ia + j * sa] - pb[ib + j * sb];
  });
  return detail::make_op("sub", std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data().data();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    double* ga = na.requires_grad ? na.grad_buffer().data().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
    detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                   std::size_t n, std::size_t sa, std::size_t sb) {
      if (ga) for (std::size_t j = 0; j < n; ++j) ga[ia + j * sa] += g[o + j];
      if (gb) for (std::size_t j = 0; j < n; ++j) gb[ib + j * sb] -= g[o + j];
    });
  });
}

inline Var mul(const Var& a, const Var& b) {
  auto plan = detail::plan_broadcast("mul", a.shape(), b.shape());
  NdArray out(plan.out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  double* po = out.data().data();
  detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                 std::size_t n, std::size_t sa, std::size_t sb) {
    for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[ia + j * sa] * pb[ib + j * sb];
  });
  return detail::make_op("mul", std::move(out), {a, b}, [plan](Node& self) {
    const double* g = self.grad.data().data();
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* va = na.value.data().data();
    const double* vb = nb.value.data().data();
    double* ga = na.requires_grad ? na.grad_buffer().data().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
    detail::for_each_row(plan, [&](std::size_t o, std::size_t ia, std::size_t ib,
                                   std::size_t n, std::size_t sa, std::size_t sb) {
      if (ga)
        for (std::size_t j = 0; j < n; ++j) ga[ia + j * sa] += g[o + j] * vb[ib + j * sb];
      if (gb)
        for (std::size_t j = 0; j < n; ++j) gb[ib + j * sb] += g[o + j] * va[ia + j * sa];
    });
  });
}

inline Var scale(const Var& a, double s) {
  NdArray out = a.value();
  for (double& v : out.storage()) v *= s;
  return detail::make_op("scale", std::move(out), {a}, [s](Node& self) {
    Node& p = *self.parents[0];
    double* gp = p.grad_buffer().data().data();
    const double* g = self.grad.data().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += s * g[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  NdArray out = a.value();
  for (double& v : out.storage()) v += s;
  return detail::make_op("add_scalar", std::move(out), {a}, [](Node& self) {
    detail::accumulate(self.parents[0]->grad_buffer(), self.grad);
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Matrix product. a: (..., M, K); b: (K, N) shared across the batch, or
// (..., K, N) with the same leading extents as a. Result (..., M, N).

inline Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) detail::shape_error("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) detail::shape_error("matmul", sa, sb);
  const bool shared_b = sb.size() == 2;
  if (!shared_b) {
    if (sb.size() != sa.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      detail::shape_error("matmul", sa, sb);
    }
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  NdArray out(out_shape);
  const double* pa = a.value().data().data();
  const double* pb = b.value().data().data();
  double* po = out.data().data();
  if (shared_b) {
    detail::gemm_nn(batch * m, k, n, pa, pb, po);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm_nn(m, k, n, pa + i * m * k, pb + i * k * n, po + i * m * n);
    }
  }
  return detail::make_op("matmul", std::move(out), {a, b},
                         [batch, m, k, n, shared_b](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* g = self.grad.data().data();
    const double* va = na.value.data().data();
    const double* vb = nb.value.data().data();
    if (na.requires_grad) {
      double* ga = na.grad_buffer().data().data();
      if (shared_b) {
        detail::gemm_nt(batch * m, n, k, g, vb, ga);
      } else {
        for (std::size_t i = 0; i < batch; ++i)
          detail::gemm_nt(m, n, k, g + i * m * n, vb + i * k * n, ga + i * m * k);
      }
    }
    if (nb.requires_grad) {
      double* gb = nb.grad_buffer().data().data();
      if (shared_b) {
        detail::gemm_tn(batch * m, k, n, va, g, gb);
      } else {
        for (std::size_t i = 0; i < batch; ++i)
          detail::gemm_tn(m, k, n, va + i * m * k, g + i * m * n, gb + i * k * n);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout ops.

inline Var reshape(const Var& a, Shape shape) {
  NdArray out = a.value().reshaped(std::move(shape));
  return detail::make_op("reshape", std::move(out), {a}, [](Node& self) {
    detail::accumulate(self.parents[0]->grad_buffer(), self.grad);
  });
}

namespace detail {

/// out[perm-index] = in[index]; `axes` maps output axis -> input axis.
inline void permute_copy(const Shape& in_shape, const std::vector<std::size_t>& axes,
                         const double* in, double* out, bool accumulate_into_in) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank);
  std::size_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = acc;
    acc *= in_shape[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t total = acc;
  if (total == 0) return;
  const std::size_t inner = rank ? out_shape[rank - 1] : 1;
  const std::size_t inner_stride = rank ? stride[rank - 1] : 0;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    if (accumulate_into_in) {
      // gradient path: `out` holds the upstream gradient in output layout
      double* dst = const_cast<double*>(in);
      for (std::size_t j = 0; j < inner; ++j) dst[src + j * inner_stride] += out[o + j];
    } else {
      for (std::size_t j = 0; j < inner; ++j) out[o + j] = in[src + j * inner_stride];
    }
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      src += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

/// Output axis i is input axis axes[i].
inline Var permute(const Var& a, std::vector<std::size_t> axes) {
  const Shape& in_shape = a.shape();
  if (axes.size() != in_shape.size()) {
    fail(ErrorKind::kShape, "permute: ", axes.size(), " axes for array of shape ",
         shape_str(in_shape));
  }
  std::vector<bool> seen(axes.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= axes.size() || seen[ax]) {
      fail(ErrorKind::kShape, "permute: invalid axis list for shape ", shape_str(in_shape));
    }
    seen[ax] = true;
  }
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  NdArray out(out_shape);
  detail::permute_copy(in_shape, axes, a.value().data().data(), out.data().data(), false);
  Shape saved_in = in_shape;
  return detail::make_op("permute", std::move(out), {a},
                         [axes = std::move(axes), saved_in](Node& self) {
    Node& p = *self.parents[0];
    detail::permute_copy(saved_in, axes, p.grad_buffer().data().data(),
                         self.grad.data().data(), true);
  });
}

/// Swaps the last two axes.
inline Var transpose(const Var& a) {
  const std::size_t r = a.shape().size();
  if (r < 2) fail(ErrorKind::kShape, "transpose: needs rank >= 2, got ", shape_str(a.shape()));
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, std::move(axes));
}

namespace detail {
struct AxisSplit {
  std::size_t outer, len, inner;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}
}  // namespace detail

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    fail(ErrorKind::kShape, "concat: axis ", axis, " out of range for ", shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) detail::shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) detail::shape_error("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  NdArray out(out_shape);
  const auto os = detail::split_axis(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    const double* src = p.value().data().data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy(src + o * len * os.inner, src + (o + 1) * len * os.inner,
                out.data().data() + (o * os.len + off) * os.inner);
    }
    off += len;
  }
  return detail::make_op_list("concat", std::move(out), parts,
                              [os, offsets](Node& self) {
    const double* g = self.grad.data().data();
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      const std::size_t len = p.value.size() / (os.outer * os.inner);
      double* gp = p.grad_buffer().data().data();
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = g + (o * os.len + offsets[pi]) * os.inner;
        double* dst = gp + o * len * os.inner;
        for (std::size_t j = 0; j < len * os.inner; ++j) dst[j] += src[j];
      }
    }
  });
}

inline Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + len > s[axis]) {
    fail(ErrorKind::kShape, "slice: [", start, ",", start + len, ") on axis ", axis,
         " exceeds shape ", shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = len;
  const auto is = detail::split_axis(s, axis);
  NdArray out(out_shape);
  const double* src = a.value().data().data();
  double* dst = out.data().data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy(src + (o * is.len + start) * is.inner,
              src + (o * is.len + start + len) * is.inner, dst + o * len * is.inner);
  }
  return detail::make_op("slice", std::move(out), {a}, [is, start, len](Node& self) {
    double* gp = self.parents[0]->grad_buffer().data().data();
    const double* g = self.grad.data().data();
    for (std::size_t o = 0; o < is.outer; ++o) {
      double* d = gp + (o * is.len + start) * is.inner;
      const double* sg = g + o * len * is.inner;
      for (std::size_t j = 0; j < len * is.inner; ++j) d[j] += sg[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities. df receives (x, y) and returns dy/dx.

namespace detail {
template <typename F, typename DF>
Var unary(const char* op, const Var& a, F f, DF df) {
  NdArray out(a.shape());
  const double* x = a.value().data().data();
  double* y = out.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) y[i] = f(x[i]);
  return make_op(op, std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    const double* xv = p.value.data().data();
    const double* yv = self.value.data().data();
    const double* g = self.grad.data().data();
    double* gp = p.grad_buffer().data().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i] * df(xv[i], yv[i]);
  });
}
}  // namespace detail

inline Var sigmoid(const Var& a) {
  return detail::unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var silu(const Var& a) {
  return detail::unary(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Var relu(const Var& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  return detail::unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
        return cdf + x * pdf;
      });
}

inline Var square(const Var& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Last-axis normalizations.

inline Var softmax(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty()) fail(ErrorKind::kShape, "softmax: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = a.size() / n;
  NdArray out(s);
  const double* x = a.value().data().data();
  double* y = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * n;
    double* yr = y + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  return detail::make_op("softmax", std::move(out), {a}, [rows, n](Node& self) {
    const double* yv = self.value.data().data();
    const double* g = self.grad.data().data();
    double* gp = self.parents[0]->grad_buffer().data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = yv + r * n;
      const double* gr = g + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* out_r = gp + r * n;
      for (std::size_t j = 0; j < n; ++j) out_r[j] += yr[j] * (gr[j] - dot);
    }
  });
}

/// Layer normalization over the last axis with affine gain/bias of shape (n).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Shape& s = x.shape();
  if (s.empty()) fail(ErrorKind::kShape, "layer_norm: scalar input");
  const std::size_t n = s.back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    fail(ErrorKind::kShape, "layer_norm: input ", shape_str(s), " with gain ",
         shape_str(gain.shape()), " and bias ", shape_str(bias.shape()));
  }
  const std::size_t rows = x.size() / n;
  NdArray out(s);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.value().data().data();
  const double* gv = gain.value().data().data();
  const double* bv = bias.value().data().data();
  double* y = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mean) * inv;
      (*xhat)[r * n + j] = h;
      y[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_op("layer_norm", std::move(out), {x, gain, bias},
                         [rows, n, xhat, rstd](Node& self) {
    Node& nx = *self.parents[0];
    Node& ng = *self.parents[1];
    Node& nb = *self.parents[2];
    const double* g = self.grad.data().data();
    const double* gv = ng.value.data().data();
    const double* h = xhat->data();
    if (ng.requires_grad || nb.requires_grad) {
      double* gg = ng.requires_grad ? ng.grad_buffer().data().data() : nullptr;
      double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          if (gg) gg[j] += g[r * n + j] * h[r * n + j];
          if (gb) gb[j] += g[r * n + j];
        }
      }
    }
    if (nx.requires_grad) {
      double* gx = nx.grad_buffer().data().data();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g[r * n + j] * gv[j];
          mean_dh += dh;
          mean_dh_h += dh * h[r * n + j];
        }
        mean_dh *= inv_n;
        mean_dh_h *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = g[r * n + j] * gv[j];
          gx[r * n + j] += (*rstd)[r] * (dh - mean_dh - h[r * n + j] * mean_dh_h);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions to a scalar.

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_op("sum", NdArray::scalar(s), {a}, [](Node& self) {
    const double g = self.grad[0];
    for (double& v : self.parents[0]->grad_buffer().storage()) v += g;
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_op("mean", NdArray::scalar(s / n), {a}, [n](Node& self) {
    const double g = self.grad[0] / n;
    for (double& v : self.parents[0]->grad_buffer().storage()) v += g;
  });
}

/// Mean over all elements of (a - b)^2, optionally weighted elementwise by a
/// constant mask and normalized by `denom` instead of the element count.
inline Var squared_error(const Var& a, const Var& b, const NdArray* weight = nullptr,
                         double denom = 0.0) {
  if (a.shape() != b.shape()) detail::shape_error("squared_error", a.shape(), b.shape());
  if (weight && weight->shape() != a.shape()) {
    detail::shape_error("squared_error(weight)", a.shape(), weight->shape());
  }
  const double n = denom > 0.0 ? denom : static_cast<double>(a.size());
  const double* av = a.value().data().data();
  const double* bv = b.value().data().data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = av[i] - bv[i];
    s += (weight ? (*weight)[i] : 1.0) * d * d;
  }
  std::shared_ptr<NdArray> w = weight ? std::make_shared<NdArray>(*weight) : nullptr;
  return detail::make_op("squared_error", NdArray::scalar(s / n), {a, b},
                         [n, w](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double g = self.grad[0] * 2.0 / n;
    const double* av = na.value.data().data();
    const double* bv = nb.value.data().data();
    double* ga = na.requires_grad ? na.grad_buffer().data().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data().data() : nullptr;
    for (std::size_t i = 0; i < na.value.size(); ++i) {
      const double d = g * (w ? (*w)[i] : 1.0) * (av[i] - bv[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(node) into every node that requires a gradient.
/// Leaves that the loss does not depend on keep a zero gradient.
inline void backward(const Var& loss) {
  if (loss.size() != 1) {
    fail(ErrorKind::kShape, "backward: loss must be scalar-shaped, got ",
         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
}

}  // namespace seldiff::ad
