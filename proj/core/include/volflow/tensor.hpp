#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "volflow/common.hpp"
#include "volflow/rng.hpp"

namespace volflow {

// Reverse-mode autodiff over a fixed op set: matmul, elementwise
// (add/sub/mul with trailing-axes broadcast; gelu/exp/neg/scale), softmax,
// layer_norm, data movement (reshape/permute/concat/narrow) and full
// reductions (sum/mean). Tensors are immutable after creation; a TapeT
// records op nodes in topological (creation) order and backward() replays
// them in reverse, accumulating gradients into pre-zeroed buffers.

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  Exp,
  Gelu,
  Softmax,
  LayerNorm,
  Reshape,
  Permute,
  Concat,
  Narrow,
  Sum,
  Mean,
};

template <typename T>
struct NodeT {
  OpKind kind = OpKind::Leaf;
  Shape shape;
  std::shared_ptr<std::vector<T>> values;
  std::vector<int> inputs;
  bool needs_grad = false;
  bool is_param = false;
  // op attributes
  double alpha = 0.0;  // Scale factor, LayerNorm eps
  int axis = 0;        // Softmax/Concat/Narrow
  int64_t start = 0;   // Narrow
  std::vector<int> perm;
  std::vector<double> saved;  // LayerNorm per-row (mean, inv_std)
};

template <typename T>
class TapeT {
 public:
  int push(NodeT<T> n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  const NodeT<T>& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  NodeT<T>& node_mut(int id) { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  std::vector<NodeT<T>> nodes_;
};

template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT constant(Shape shape, std::vector<T> data) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw_shape("tensor: shape " + shape_str(shape) + " does not match data size " +
                  std::to_string(data.size()));
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(data));
    t.check_finite("constant");
    return t;
  }

  static TensorT full(Shape shape, T v) {
    TensorT t;
    int64_t n = numel(shape);
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(n), v);
    return t;
  }

  // Constant view sharing the caller's buffer (no copy, no graph).
  static TensorT constant_shared(Shape shape, std::shared_ptr<std::vector<T>> data) {
    if (numel(shape) != static_cast<int64_t>(data->size()))
      throw_shape("tensor: shape " + shape_str(shape) + " does not match data size " +
                  std::to_string(data->size()));
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.check_finite("constant");
    return t;
  }

  static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static TensorT scalar_of(T v) { return constant(Shape{}, {v}); }

  // Graph leaf. Shares the caller's buffer: no copy.
  static TensorT leaf(TapeT<T>& tape, Shape shape, std::shared_ptr<std::vector<T>> data,
                      bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data->size()))
      throw_shape("leaf: shape " + shape_str(shape) + " does not match data size " +
                  std::to_string(data->size()));
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.requires_grad_ = requires_grad;
    t.tape_ = &tape;
    NodeT<T> n;
    n.kind = OpKind::Leaf;
    n.shape = t.shape_;
    n.values = t.data_;
    n.is_param = requires_grad;
    n.needs_grad = requires_grad;
    t.node_ = tape.push(std::move(n));
    t.check_finite("leaf");
    return t;
  }

  static TensorT leaf(TapeT<T>& tape, Shape shape, std::vector<T> data, bool requires_grad) {
    return leaf(tape, std::move(shape), std::make_shared<std::vector<T>>(std::move(data)),
                requires_grad);
  }

  const Shape& shape() const { return shape_; }
  int64_t size() const { return numel(shape_); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<T>& values() const { return *data_; }
  const std::shared_ptr<std::vector<T>>& data() const { return data_; }
  bool defined() const { return data_ != nullptr; }
  bool requires_grad() const { return requires_grad_; }
  TapeT<T>* tape() const { return tape_; }
  int node() const { return node_; }

  T scalar() const {
    if (size() != 1) throw_usage("scalar() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  void check_finite(const char* op) const {
    for (T v : *data_)
      if (!std::isfinite(static_cast<double>(v)))
        throw_numeric(std::string("non-finite value produced by op '") + op + "'");
  }

 private:
  template <typename U>
  friend TensorT<U> attach_result(TapeT<U>*, NodeT<U>, Shape, std::shared_ptr<std::vector<U>>,
                                  bool, const char*);
  template <typename U>
  friend int ensure_node(TapeT<U>& tape, const TensorT<U>& t);

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  TapeT<T>* tape_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// ---------------------------------------------------------------------------
// internals

template <typename T>
int ensure_node(TapeT<T>& tape, const TensorT<T>& t) {
  if (t.tape_ == &tape) return t.node_;
  if (t.tape_ != nullptr)
    throw_usage("op inputs belong to different graphs");
  NodeT<T> n;
  n.kind = OpKind::Leaf;
  n.shape = t.shape_;
  n.values = t.data_;
  return tape.push(std::move(n));
}

template <typename T>
TapeT<T>* common_tape(const TensorT<T>& a) {
  return a.tape();
}

template <typename T, typename... Rest>
TapeT<T>* common_tape(const TensorT<T>& a, const Rest&... rest) {
  TapeT<T>* t = common_tape(rest...);
  if (a.tape() == nullptr) return t;
  if (t == nullptr) return a.tape();
  if (t != a.tape()) throw_usage("op inputs belong to different graphs");
  return t;
}

template <typename T>
TensorT<T> attach_result(TapeT<T>* tape, NodeT<T> node, Shape shape,
                         std::shared_ptr<std::vector<T>> data, bool requires_grad,
                         const char* opname) {
  TensorT<T> t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  t.requires_grad_ = requires_grad;
  t.check_finite(opname);
  if (tape != nullptr) {
    node.shape = t.shape_;
    node.values = t.data_;
    bool ng = false;
    for (int id : node.inputs) ng = ng || tape->node(id).needs_grad;
    node.needs_grad = ng;
    t.tape_ = tape;
    t.node_ = tape->push(std::move(node));
  }
  return t;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw_shape(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                  " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `s` expanded to broadcast shape `out` (0 on broadcast axes).
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto own = row_major_strides(s);
  size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i) st[off + i] = s[i] == 1 ? 0 : own[i];
  return st;
}

// Reduce `g` (of shape `from`) by summation onto shape `to` (trailing-axes
// broadcast inverse). Accumulates into `out` which must be numel(to) long.
template <typename T>
void reduce_broadcast(const std::vector<T>& g, const Shape& from, const Shape& to, T* out) {
  if (from == to) {
    for (size_t i = 0; i < g.size(); ++i) out[i] += g[i];
    return;
  }
  auto st = broadcast_strides(to, from);
  size_t r = from.size();
  std::vector<int64_t> idx(r, 0);
  int64_t off = 0;
  for (size_t lin = 0; lin < g.size(); ++lin) {
    out[off] += g[lin];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      off += st[d];
      if (idx[d] < from[d]) break;
      idx[d] = 0;
      off -= st[d] * from[d];
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise binary with trailing-axes broadcast

template <typename T, typename F>
TensorT<T> binary_impl(const TensorT<T>& a, const TensorT<T>& b, OpKind kind, const char* name,
                       F fn) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  int64_t n = numel(os);
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) (*out)[i] = fn(av[i], bv[i]);
  } else if (a.shape() == os && numel(b.shape()) >= 1 &&
             std::equal(b.shape().begin(), b.shape().end(),
                        os.end() - static_cast<long>(b.shape().size()))) {
    // row-broadcast fast path: b is a suffix block of a
    int64_t bn = numel(b.shape());
    for (int64_t i = 0; i < n; ++i) (*out)[i] = fn(av[i], bv[i % bn]);
  } else {
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
      (*out)[lin] = fn(av[oa], bv[ob]);
      for (size_t d = r; d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < os[d]) break;
        idx[d] = 0;
        oa -= sa[d] * os[d];
        ob -= sb[d] * os[d];
      }
    }
  }
  TapeT<T>* tape = common_tape(a, b);
  NodeT<T> node;
  node.kind = kind;
  if (tape) node.inputs = {ensure_node(*tape, a), ensure_node(*tape, b)};
  return attach_result(tape, std::move(node), os, std::move(out),
                       a.requires_grad() || b.requires_grad(), name);
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_impl(a, b, OpKind::Add, "add", [](T x, T y) { return x + y; });
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_impl(a, b, OpKind::Sub, "sub", [](T x, T y) { return x - y; });
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_impl(a, b, OpKind::Mul, "mul", [](T x, T y) { return x * y; });
}

// ---------------------------------------------------------------------------
// elementwise unary

template <typename T, typename F>
TensorT<T> unary_impl(const TensorT<T>& x, OpKind kind, const char* name, double alpha, F fn) {
  int64_t n = x.size();
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  const auto& xv = x.values();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = fn(xv[i]);
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = kind;
  node.alpha = alpha;
  if (tape) node.inputs = {x.node()};
  return attach_result(tape, std::move(node), x.shape(), std::move(out), x.requires_grad(), name);
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
  return unary_impl(x, OpKind::Neg, "neg", 0.0, [](T v) { return -v; });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, double alpha) {
  return unary_impl(x, OpKind::Scale, "scale", alpha,
                    [alpha](T v) { return static_cast<T>(alpha * static_cast<double>(v)); });
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
  return unary_impl(x, OpKind::Exp, "exp", 0.0, [](T v) { return std::exp(v); });
}

template <typename T>
T gelu_val(T x) {
  return static_cast<T>(0.5 * static_cast<double>(x) *
                        (1.0 + std::erf(static_cast<double>(x) * 0.7071067811865475)));
}

template <typename T>
T gelu_grad(T x) {
  double xd = static_cast<double>(x);
  double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
  double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
  return static_cast<T>(cdf + xd * pdf);
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  return unary_impl(x, OpKind::Gelu, "gelu", 0.0, [](T v) { return gelu_val(v); });
}

// ---------------------------------------------------------------------------
// softmax

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw_value("softmax: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  int64_t d = s[static_cast<size_t>(axis)];
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  int64_t outer = x.size() / (d * inner);
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(x.size()));
  const auto& xv = x.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * d * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < d; ++i) mx = std::max(mx, static_cast<double>(xv[base + i * inner]));
      double denom = 0;
      for (int64_t i = 0; i < d; ++i)
        denom += std::exp(static_cast<double>(xv[base + i * inner]) - mx);
      for (int64_t i = 0; i < d; ++i)
        (*out)[base + i * inner] =
            static_cast<T>(std::exp(static_cast<double>(xv[base + i * inner]) - mx) / denom);
    }
  }
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Softmax;
  node.axis = axis;
  if (tape) node.inputs = {x.node()};
  return attach_result(tape, std::move(node), x.shape(), std::move(out), x.requires_grad(),
                       "softmax");
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps) {
  if (eps <= 0) throw_value("layer_norm: eps must be positive");
  if (x.rank() < 1) throw_shape("layer_norm: input must have at least one axis");
  int64_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    throw_shape("layer_norm: gamma/beta size must match last axis extent " + std::to_string(d));
  int64_t rows = x.size() / d;
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(x.size()));
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> saved(static_cast<size_t>(rows) * 2);
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mu = 0;
    for (int64_t i = 0; i < d; ++i) mu += static_cast<double>(row[i]);
    mu /= static_cast<double>(d);
    double var = 0;
    for (int64_t i = 0; i < d; ++i) {
      double c = static_cast<double>(row[i]) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    saved[static_cast<size_t>(r) * 2] = mu;
    saved[static_cast<size_t>(r) * 2 + 1] = inv;
    T* orow = out->data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      double xh = (static_cast<double>(row[i]) - mu) * inv;
      orow[i] = static_cast<T>(xh * static_cast<double>(gv[i]) + static_cast<double>(bv[i]));
    }
  }
  TapeT<T>* tape = common_tape(x, gamma, beta);
  NodeT<T> node;
  node.kind = OpKind::LayerNorm;
  node.alpha = eps;
  node.saved = std::move(saved);
  if (tape)
    node.inputs = {ensure_node(*tape, x), ensure_node(*tape, gamma), ensure_node(*tape, beta)};
  return attach_result(tape, std::move(node), x.shape(), std::move(out),
                       x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
                       "layer_norm");
}

// ---------------------------------------------------------------------------
// data movement

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape to) {
  if (numel(to) != x.size())
    throw_shape("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(to));
  auto out = std::make_shared<std::vector<T>>(x.values());
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Reshape;
  if (tape) node.inputs = {x.node()};
  return attach_result(tape, std::move(node), std::move(to), std::move(out), x.requires_grad(),
                       "reshape");
}

template <typename T>
void permute_copy(const std::vector<T>& in, const Shape& in_shape, const std::vector<int>& perm,
                  std::vector<T>& out, bool add_into) {
  size_t r = in_shape.size();
  Shape os(r);
  for (size_t i = 0; i < r; ++i) os[i] = in_shape[static_cast<size_t>(perm[i])];
  auto in_st = row_major_strides(in_shape);
  std::vector<int64_t> step(r);
  for (size_t i = 0; i < r; ++i) step[i] = in_st[static_cast<size_t>(perm[i])];
  std::vector<int64_t> idx(r, 0);
  int64_t src = 0;
  int64_t n = numel(in_shape);
  for (int64_t lin = 0; lin < n; ++lin) {
    if (add_into)
      out[static_cast<size_t>(src)] += in[static_cast<size_t>(lin)];
    else
      out[static_cast<size_t>(lin)] = in[static_cast<size_t>(src)];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      src += step[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      src -= step[d] * os[d];
    }
  }
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, std::vector<int> perm) {
  size_t r = static_cast<size_t>(x.rank());
  if (perm.size() != r) throw_shape("permute: spec size must equal rank");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || static_cast<size_t>(p) >= r || seen[static_cast<size_t>(p)])
      throw_shape("permute: invalid axis permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape os(r);
  for (size_t i = 0; i < r; ++i) os[i] = x.shape()[static_cast<size_t>(perm[i])];
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(x.size()));
  permute_copy(x.values(), x.shape(), perm, *out, false);
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Permute;
  node.perm = std::move(perm);
  if (tape) node.inputs = {x.node()};
  return attach_result(tape, std::move(node), std::move(os), std::move(out), x.requires_grad(),
                       "permute");
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  if (parts.empty()) throw_usage("concat: no inputs");
  int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw_shape("concat: axis out of range");
  Shape os = parts[0].shape();
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw_shape("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape()[static_cast<size_t>(i)] != os[static_cast<size_t>(i)])
        throw_shape("concat: extent mismatch at axis " + std::to_string(i) + " between " +
                    shape_str(os) + " and " + shape_str(p.shape()));
    total_axis += p.shape()[static_cast<size_t>(axis)];
  }
  os[static_cast<size_t>(axis)] = total_axis;
  int64_t inner = 1;
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
  int64_t outer = numel(os) / (total_axis * inner);
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(numel(os)));
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t pa = p.shape()[static_cast<size_t>(axis)];
    const auto& pv = p.values();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out->data() + (o * total_axis + off) * inner, pv.data() + o * pa * inner,
                  static_cast<size_t>(pa * inner) * sizeof(T));
    off += pa;
  }
  TapeT<T>* tape = nullptr;
  for (const auto& p : parts)
    if (p.tape()) {
      if (tape && tape != p.tape()) throw_usage("op inputs belong to different graphs");
      tape = p.tape();
    }
  NodeT<T> node;
  node.kind = OpKind::Concat;
  node.axis = axis;
  bool rg = false;
  if (tape)
    for (const auto& p : parts) node.inputs.push_back(ensure_node(*tape, p));
  for (const auto& p : parts) rg = rg || p.requires_grad();
  return attach_result(tape, std::move(node), std::move(os), std::move(out), rg, "concat");
}

template <typename T>
TensorT<T> narrow(const TensorT<T>& x, int axis, int64_t start, int64_t len) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw_shape("narrow: axis out of range");
  int64_t extent = x.shape()[static_cast<size_t>(axis)];
  if (start < 0 || len <= 0 || start + len > extent)
    throw_shape("narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of bounds for extent " + std::to_string(extent));
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = len;
  int64_t inner = 1;
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
  int64_t outer = x.size() / (extent * inner);
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(numel(os)));
  const auto& xv = x.values();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out->data() + o * len * inner, xv.data() + (o * extent + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(T));
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Narrow;
  node.axis = axis;
  node.start = start;
  if (tape) node.inputs = {x.node()};
  return attach_result(tape, std::move(node), std::move(os), std::move(out), x.requires_grad(),
                       "narrow");
}

template <typename T>
std::vector<TensorT<T>> split(const TensorT<T>& x, int axis, const std::vector<int64_t>& sizes) {
  std::vector<TensorT<T>> out;
  int64_t off = 0;
  for (int64_t s : sizes) {
    out.push_back(narrow(x, axis, off, s));
    off += s;
  }
  int r = x.rank();
  int ax = axis < 0 ? axis + r : axis;
  if (off != x.shape()[static_cast<size_t>(ax)])
    throw_shape("split: sizes do not cover the axis extent");
  return out;
}

// ---------------------------------------------------------------------------
// reductions (double accumulation, linear index order)

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += static_cast<double>(v);
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Sum;
  if (tape) node.inputs = {x.node()};
  auto out = std::make_shared<std::vector<T>>(1, static_cast<T>(acc));
  return attach_result(tape, std::move(node), Shape{}, std::move(out), x.requires_grad(), "sum");
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += static_cast<double>(v);
  acc /= static_cast<double>(x.size());
  TapeT<T>* tape = x.tape();
  NodeT<T> node;
  node.kind = OpKind::Mean;
  if (tape) node.inputs = {x.node()};
  auto out = std::make_shared<std::vector<T>>(1, static_cast<T>(acc));
  return attach_result(tape, std::move(node), Shape{}, std::move(out), x.requires_grad(), "mean");
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
void gemm_nn(int64_t m, int64_t k, int64_t n, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t l = 0; l < k; ++l) {
      T av = arow[l];
      const T* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* g, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* crow = c + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const T* brow = b + l * n;
      T acc = 0;
      for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[l] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
template <typename T>
void gemm_tn(int64_t m, int64_t k, int64_t n, const T* a, const T* g, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (int64_t l = 0; l < k; ++l) {
      T av = arow[l];
      T* crow = c + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

struct MatmulDims {
  Shape batch;          // broadcast batch extents
  int64_t m, k, n;
  std::vector<int64_t> a_bstride, b_bstride;  // per batch axis, in units of matrices
};

inline MatmulDims matmul_dims(const Shape& sa, const Shape& sb) {
  if (sa.size() < 2 || sb.size() < 2)
    throw_shape("matmul: inputs must have rank >= 2, got " + shape_str(sa) + " and " +
                shape_str(sb));
  MatmulDims d;
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  int64_t kb = sb[sb.size() - 2];
  d.n = sb[sb.size() - 1];
  if (d.k != kb)
    throw_shape("matmul: inner extents differ between " + shape_str(sa) + " and " + shape_str(sb));
  Shape ab(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  d.batch = broadcast_shape(ab, bb, "matmul");
  d.a_bstride = broadcast_strides(ab, d.batch);
  d.b_bstride = broadcast_strides(bb, d.batch);
  return d;
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  MatmulDims d = matmul_dims(a.shape(), b.shape());
  Shape os = d.batch;
  os.push_back(d.m);
  os.push_back(d.n);
  int64_t batch_n = numel(d.batch);
  auto out = std::make_shared<std::vector<T>>(static_cast<size_t>(numel(os)), T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  size_t r = d.batch.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t bi = 0; bi < batch_n; ++bi) {
    gemm_nn(d.m, d.k, d.n, av + oa * d.m * d.k, bv + ob * d.k * d.n, out->data() + bi * d.m * d.n);
    for (size_t dd = r; dd-- > 0;) {
      ++idx[dd];
      oa += d.a_bstride[dd];
      ob += d.b_bstride[dd];
      if (idx[dd] < d.batch[dd]) break;
      idx[dd] = 0;
      oa -= d.a_bstride[dd] * d.batch[dd];
      ob -= d.b_bstride[dd] * d.batch[dd];
    }
  }
  TapeT<T>* tape = common_tape(a, b);
  NodeT<T> node;
  node.kind = OpKind::MatMul;
  if (tape) node.inputs = {ensure_node(*tape, a), ensure_node(*tape, b)};
  return attach_result(tape, std::move(node), std::move(os), std::move(out),
                       a.requires_grad() || b.requires_grad(), "matmul");
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
class GradientsT {
 public:
  using Map = std::map<int, std::vector<T>>;

  // Gradient buffer for a tensor's node, or nullptr (means zero).
  const std::vector<T>* find(const TensorT<T>& t) const {
    auto it = grads_.find(t.node());
    return it == grads_.end() ? nullptr : &it->second;
  }
  const std::vector<T>* find(int node_id) const {
    auto it = grads_.find(node_id);
    return it == grads_.end() ? nullptr : &it->second;
  }
  Map& raw() { return grads_; }
  const Map& raw() const { return grads_; }

 private:
  Map grads_;
};

using Gradients = GradientsT<float>;

template <typename T>
GradientsT<T> backward(const TensorT<T>& loss) {
  if (loss.size() != 1) throw_usage("backward: loss must be scalar, got " + shape_str(loss.shape()));
  TapeT<T>* tape = loss.tape();
  if (tape == nullptr || loss.node() < 0)
    throw_usage("backward: loss is not connected to a graph");
  int n = tape->size();
  std::vector<std::vector<T>> g(static_cast<size_t>(n));
  auto buf = [&](int id) -> std::vector<T>& {
    auto& v = g[static_cast<size_t>(id)];
    if (v.empty()) v.assign(static_cast<size_t>(numel(tape->node(id).shape)), T(0));
    return v;
  };
  bool any_param = false;
  for (int i = 0; i <= loss.node(); ++i) any_param = any_param || tape->node(i).is_param;
  if (!any_param)
    throw_usage("backward: graph has no differentiable leaves");

  buf(loss.node())[0] = T(1);
  for (int id = loss.node(); id >= 0; --id) {
    const NodeT<T>& nd = tape->node(id);
    if (!nd.needs_grad || g[static_cast<size_t>(id)].empty()) continue;
    const std::vector<T>& go = g[static_cast<size_t>(id)];
    auto input = [&](size_t i) -> const NodeT<T>& { return tape->node(nd.inputs[i]); };
    auto wants = [&](size_t i) { return tape->node(nd.inputs[i]).needs_grad; };
    switch (nd.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Add: {
        if (wants(0)) reduce_broadcast(go, nd.shape, input(0).shape, buf(nd.inputs[0]).data());
        if (wants(1)) reduce_broadcast(go, nd.shape, input(1).shape, buf(nd.inputs[1]).data());
        break;
      }
      case OpKind::Sub: {
        if (wants(0)) reduce_broadcast(go, nd.shape, input(0).shape, buf(nd.inputs[0]).data());
        if (wants(1)) {
          std::vector<T> ng(go.size());
          for (size_t i = 0; i < go.size(); ++i) ng[i] = -go[i];
          reduce_broadcast(ng, nd.shape, input(1).shape, buf(nd.inputs[1]).data());
        }
        break;
      }
      case OpKind::Mul: {
        const auto& av = *input(0).values;
        const auto& bv = *input(1).values;
        auto expand_mul = [&](const std::vector<T>& other, const Shape& other_shape,
                              const Shape& target_shape, std::vector<T>& dst) {
          std::vector<T> tmp(go.size());
          auto st = broadcast_strides(other_shape, nd.shape);
          size_t r = nd.shape.size();
          std::vector<int64_t> idx(r, 0);
          int64_t off = 0;
          for (size_t lin = 0; lin < go.size(); ++lin) {
            tmp[lin] = go[lin] * other[static_cast<size_t>(off)];
            for (size_t dd = r; dd-- > 0;) {
              ++idx[dd];
              off += st[dd];
              if (idx[dd] < nd.shape[dd]) break;
              idx[dd] = 0;
              off -= st[dd] * nd.shape[dd];
            }
          }
          reduce_broadcast(tmp, nd.shape, target_shape, dst.data());
        };
        if (wants(0)) expand_mul(bv, input(1).shape, input(0).shape, buf(nd.inputs[0]));
        if (wants(1)) expand_mul(av, input(0).shape, input(1).shape, buf(nd.inputs[1]));
        break;
      }
      case OpKind::Neg: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          for (size_t i = 0; i < go.size(); ++i) d[i] -= go[i];
        }
        break;
      }
      case OpKind::Scale: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          T al = static_cast<T>(nd.alpha);
          for (size_t i = 0; i < go.size(); ++i) d[i] += al * go[i];
        }
        break;
      }
      case OpKind::Exp: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          const auto& ov = *nd.values;
          for (size_t i = 0; i < go.size(); ++i) d[i] += go[i] * ov[i];
        }
        break;
      }
      case OpKind::Gelu: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          const auto& xv = *input(0).values;
          for (size_t i = 0; i < go.size(); ++i) d[i] += go[i] * gelu_grad(xv[i]);
        }
        break;
      }
      case OpKind::Softmax: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          const auto& yv = *nd.values;
          int64_t dim = nd.shape[static_cast<size_t>(nd.axis)];
          int64_t inner = 1;
          for (size_t i = static_cast<size_t>(nd.axis) + 1; i < nd.shape.size(); ++i)
            inner *= nd.shape[i];
          int64_t outer = static_cast<int64_t>(go.size()) / (dim * inner);
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
              int64_t base = o * dim * inner + in;
              double s = 0;
              for (int64_t i = 0; i < dim; ++i)
                s += static_cast<double>(go[static_cast<size_t>(base + i * inner)]) *
                     static_cast<double>(yv[static_cast<size_t>(base + i * inner)]);
              for (int64_t i = 0; i < dim; ++i) {
                size_t p = static_cast<size_t>(base + i * inner);
                d[p] += static_cast<T>(static_cast<double>(yv[p]) *
                                       (static_cast<double>(go[p]) - s));
              }
            }
        }
        break;
      }
      case OpKind::LayerNorm: {
        const auto& xv = *input(0).values;
        const auto& gv = *input(1).values;
        int64_t dim = nd.shape.back();
        int64_t rows = static_cast<int64_t>(go.size()) / dim;
        std::vector<T>* dx = wants(0) ? &buf(nd.inputs[0]) : nullptr;
        std::vector<T>* dg = wants(1) ? &buf(nd.inputs[1]) : nullptr;
        std::vector<T>* db = wants(2) ? &buf(nd.inputs[2]) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          double mu = nd.saved[static_cast<size_t>(r) * 2];
          double inv = nd.saved[static_cast<size_t>(r) * 2 + 1];
          const T* xr = xv.data() + r * dim;
          const T* gr = go.data() + r * dim;
          double m1 = 0, m2 = 0;
          for (int64_t i = 0; i < dim; ++i) {
            double xh = (static_cast<double>(xr[i]) - mu) * inv;
            double dxh = static_cast<double>(gr[i]) * static_cast<double>(gv[i]);
            m1 += dxh;
            m2 += dxh * xh;
            if (dg) (*dg)[static_cast<size_t>(i)] += static_cast<T>(static_cast<double>(gr[i]) * xh);
            if (db) (*db)[static_cast<size_t>(i)] += gr[i];
          }
          if (dx) {
            m1 /= static_cast<double>(dim);
            m2 /= static_cast<double>(dim);
            T* dxr = dx->data() + r * dim;
            for (int64_t i = 0; i < dim; ++i) {
              double xh = (static_cast<double>(xr[i]) - mu) * inv;
              double dxh = static_cast<double>(gr[i]) * static_cast<double>(gv[i]);
              dxr[i] += static_cast<T>(inv * (dxh - m1 - xh * m2));
            }
          }
        }
        break;
      }
      case OpKind::Reshape: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          for (size_t i = 0; i < go.size(); ++i) d[i] += go[i];
        }
        break;
      }
      case OpKind::Permute: {
        if (wants(0)) permute_copy(go, input(0).shape, nd.perm, buf(nd.inputs[0]), true);
        break;
      }
      case OpKind::Concat: {
        int64_t inner = 1;
        for (size_t i = static_cast<size_t>(nd.axis) + 1; i < nd.shape.size(); ++i)
          inner *= nd.shape[i];
        int64_t total_axis = nd.shape[static_cast<size_t>(nd.axis)];
        int64_t outer = static_cast<int64_t>(go.size()) / (total_axis * inner);
        int64_t off = 0;
        for (size_t p = 0; p < nd.inputs.size(); ++p) {
          int64_t pa = input(p).shape[static_cast<size_t>(nd.axis)];
          if (wants(p)) {
            auto& d = buf(nd.inputs[p]);
            for (int64_t o = 0; o < outer; ++o) {
              const T* src = go.data() + (o * total_axis + off) * inner;
              T* dst = d.data() + o * pa * inner;
              for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
            }
          }
          off += pa;
        }
        break;
      }
      case OpKind::Narrow: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          const Shape& is = input(0).shape;
          int64_t extent = is[static_cast<size_t>(nd.axis)];
          int64_t len = nd.shape[static_cast<size_t>(nd.axis)];
          int64_t inner = 1;
          for (size_t i = static_cast<size_t>(nd.axis) + 1; i < is.size(); ++i) inner *= is[i];
          int64_t outer = numel(is) / (extent * inner);
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = go.data() + o * len * inner;
            T* dst = d.data() + (o * extent + nd.start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        }
        break;
      }
      case OpKind::Sum: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          T gv0 = go[0];
          for (auto& v : d) v += gv0;
        }
        break;
      }
      case OpKind::Mean: {
        if (wants(0)) {
          auto& d = buf(nd.inputs[0]);
          T gv0 = static_cast<T>(static_cast<double>(go[0]) / static_cast<double>(d.size()));
          for (auto& v : d) v += gv0;
        }
        break;
      }
      case OpKind::MatMul: {
        const NodeT<T>& na = input(0);
        const NodeT<T>& nb = input(1);
        MatmulDims dm = matmul_dims(na.shape, nb.shape);
        int64_t batch_n = numel(dm.batch);
        size_t r = dm.batch.size();
        std::vector<int64_t> idx(r, 0);
        int64_t oa = 0, ob = 0;
        std::vector<T>* da = wants(0) ? &buf(nd.inputs[0]) : nullptr;
        std::vector<T>* db = wants(1) ? &buf(nd.inputs[1]) : nullptr;
        const T* av = na.values->data();
        const T* bv = nb.values->data();
        for (int64_t bi = 0; bi < batch_n; ++bi) {
          const T* gp = go.data() + bi * dm.m * dm.n;
          if (da)
            gemm_nt(dm.m, dm.n, dm.k, gp, bv + ob * dm.k * dm.n, da->data() + oa * dm.m * dm.k);
          if (db)
            gemm_tn(dm.m, dm.k, dm.n, av + oa * dm.m * dm.k, gp, db->data() + ob * dm.k * dm.n);
          for (size_t dd = r; dd-- > 0;) {
            ++idx[dd];
            oa += dm.a_bstride[dd];
            ob += dm.b_bstride[dd];
            if (idx[dd] < dm.batch[dd]) break;
            idx[dd] = 0;
            oa -= dm.a_bstride[dd] * dm.batch[dd];
            ob -= dm.b_bstride[dd] * dm.batch[dd];
          }
        }
        break;
      }
    }
  }

  GradientsT<T> result;
  for (int id = 0; id <= loss.node(); ++id) {
    if (tape->node(id).is_param && !g[static_cast<size_t>(id)].empty())
      result.raw().emplace(id, std::move(g[static_cast<size_t>(id)]));
  }
  return result;
}

// ---------------------------------------------------------------------------
// finite-difference oracle

// Central-difference check of d f / d x. `f` must be a pure scalar-valued
// function; it is called with graph leaves for the analytic pass and plain
// constants for the probes. Per-coordinate step is eps * max(1, |x_i|).
// When max_coords > 0, that many coordinates are sampled with `rng`, or,
// when rng is null, taken as the largest-|gradient| coordinates (the
// well-conditioned ones for a sampled check). Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<TensorT<T>(const TensorT<T>&)>& f, const TensorT<T>& x,
                  double eps, int64_t max_coords = 0, Rng* rng = nullptr) {
  TapeT<T> tape;
  TensorT<T> leaf = TensorT<T>::leaf(tape, x.shape(), std::make_shared<std::vector<T>>(x.values()),
                                     true);
  TensorT<T> loss = f(leaf);
  if (loss.size() != 1) throw_usage("grad_check: f must be scalar-valued");
  GradientsT<T> grads = backward(loss);
  const std::vector<T>* an = grads.find(leaf);

  int64_t n = x.size();
  std::vector<int64_t> coords;
  if (max_coords <= 0 || max_coords >= n) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else if (rng != nullptr) {
    for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng->uniform_int(0, n - 1));
  } else {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    std::sort(coords.begin(), coords.end(), [&](int64_t a, int64_t b) {
      double ga = an ? std::abs(static_cast<double>((*an)[static_cast<size_t>(a)])) : 0.0;
      double gb = an ? std::abs(static_cast<double>((*an)[static_cast<size_t>(b)])) : 0.0;
      if (ga != gb) return ga > gb;
      return a < b;
    });
    coords.resize(static_cast<size_t>(max_coords));
  }

  double worst = 0;
  std::vector<T> probe = x.values();
  for (int64_t c : coords) {
    size_t ci = static_cast<size_t>(c);
    T orig = probe[ci];
    double step = eps * std::max(1.0, std::abs(static_cast<double>(orig)));
    probe[ci] = static_cast<T>(static_cast<double>(orig) + step);
    double fp = static_cast<double>(f(TensorT<T>::constant(x.shape(), probe)).scalar());
    probe[ci] = static_cast<T>(static_cast<double>(orig) - step);
    double fm = static_cast<double>(f(TensorT<T>::constant(x.shape(), probe)).scalar());
    probe[ci] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double analytic = an ? static_cast<double>((*an)[ci]) : 0.0;
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace volflow
