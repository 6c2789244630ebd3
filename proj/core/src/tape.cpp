#include "idfe/tape.hpp"

#include <algorithm>
#include <cmath>

namespace idfe {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::reshape: return "reshape";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::mul: return "mul";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::batch_norm: return "batch_norm";
    case Op::dropout: return "dropout";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::concat: return "concat";
    case Op::grl: return "grl";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "?";
}

namespace {

struct AxisSpan {
  std::int64_t outer;
  std::int64_t n;
  std::int64_t inner;
};

AxisSpan axis_span(const Shape& s, int axis) {
  AxisSpan sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) sp.inner *= s[static_cast<std::size_t>(i)];
  return sp;
}

void check_axis(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  }
}

Shape drop_axis(const Shape& s, int axis) {
  Shape r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i != axis) r.push_back(s[static_cast<std::size_t>(i)]);
  }
  return r;
}

}  // namespace

template <class T>
auto TapeT<T>::emit(Node n) -> int {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
auto TapeT<T>::node_checked(int id, const char* what) const -> const Node& {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw StateError(std::string(what) + ": node " + std::to_string(id) +
                     " not on this tape (tape has " + std::to_string(nodes_.size()) + " nodes)");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

template <class T>
auto TapeT<T>::value(int id) const -> const Tensor& {
  return node_checked(id, "value").out;
}

template <class T>
auto TapeT<T>::grad(int id) const -> const Tensor& {
  node_checked(id, "grad");
  if (grads_.size() != nodes_.size()) {
    throw StateError("grad: backward has not run on this tape");
  }
  return grads_[static_cast<std::size_t>(id)];
}

template <class T>
auto TapeT<T>::leaf(Tensor v) -> Value {
  Node n;
  n.op = Op::leaf;
  n.out = std::move(v);
  return wrap(emit(std::move(n)));
}

template <class T>
auto TapeT<T>::param(const std::string& name, const Tensor& v) -> Value {
  Value val = leaf(v);
  named_.emplace_back(name, val.id);
  return val;
}

template <class T>
auto TapeT<T>::matmul(Value a, Value b) -> Value {
  if (a.tape != this || b.tape != this) throw StateError("matmul: values from a different tape");
  const Tensor& A = value(a.id);
  const Tensor& B = value(b.id);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) {
    throw DimensionError("matmul: shape mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape));
  }
  const std::int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Node nd;
  nd.op = Op::matmul;
  nd.in = {a.id, b.id};
  nd.out = Tensor(Shape{m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const T aip = A.at(i, p);
      if (aip == T(0)) continue;
      for (std::int64_t j = 0; j < n; ++j) nd.out.at(i, j) += aip * B.at(p, j);
    }
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::transpose(Value a) -> Value {
  if (a.tape != this) throw StateError("transpose: value from a different tape");
  const Tensor& A = value(a.id);
  if (A.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(A.shape));
  Node nd;
  nd.op = Op::transpose;
  nd.in = {a.id, -1};
  nd.out = Tensor(Shape{A.shape[1], A.shape[0]});
  for (std::int64_t i = 0; i < A.shape[0]; ++i)
    for (std::int64_t j = 0; j < A.shape[1]; ++j) nd.out.at(j, i) = A.at(i, j);
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::reshape(Value a, Shape s) -> Value {
  if (a.tape != this) throw StateError("reshape: value from a different tape");
  Node nd;
  nd.op = Op::reshape;
  nd.in = {a.id, -1};
  nd.out = value(a.id).reshaped(std::move(s));
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::add(Value a, Value b) -> Value {
  if (a.tape != this || b.tape != this) throw StateError("add: values from a different tape");
  const Tensor& A = value(a.id);
  const Tensor& B = value(b.id);
  Node nd;
  nd.op = Op::add;
  nd.in = {a.id, b.id};
  if (A.shape == B.shape) {
    nd.axis = 0;  // same-shape
    nd.out = A;
    for (std::int64_t i = 0; i < B.numel(); ++i) nd.out.at(i) += B.at(i);
  } else if (A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
    nd.axis = 1;  // row broadcast
    nd.out = A;
    for (std::int64_t i = 0; i < A.shape[0]; ++i)
      for (std::int64_t j = 0; j < A.shape[1]; ++j) nd.out.at(i, j) += B.at(j);
  } else {
    throw DimensionError("add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::scale(Value a, T c) -> Value {
  if (a.tape != this) throw StateError("scale: value from a different tape");
  Node nd;
  nd.op = Op::scale;
  nd.in = {a.id, -1};
  nd.scalar = c;
  nd.out = value(a.id);
  for (auto& x : nd.out.data) x *= c;
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::mul(Value a, Value b) -> Value {
  if (a.tape != this || b.tape != this) throw StateError("mul: values from a different tape");
  const Tensor& A = value(a.id);
  const Tensor& B = value(b.id);
  if (A.shape != B.shape) {
    throw DimensionError("mul: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  }
  Node nd;
  nd.op = Op::mul;
  nd.in = {a.id, b.id};
  nd.out = A;
  for (std::int64_t i = 0; i < B.numel(); ++i) nd.out.at(i) *= B.at(i);
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::relu(Value a) -> Value {
  if (a.tape != this) throw StateError("relu: value from a different tape");
  Node nd;
  nd.op = Op::relu;
  nd.in = {a.id, -1};
  nd.out = value(a.id);
  for (auto& x : nd.out.data) x = std::max(x, T(0));
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::softmax(Value a, int axis) -> Value {
  if (a.tape != this) throw StateError("softmax: value from a different tape");
  const Tensor& A = value(a.id);
  check_axis("softmax", A.shape, axis);
  const AxisSpan sp = axis_span(A.shape, axis);
  Node nd;
  nd.op = Op::softmax;
  nd.in = {a.id, -1};
  nd.axis = axis;
  nd.out = Tensor(A.shape);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      T mx = A.at(base);
      for (std::int64_t j = 1; j < sp.n; ++j) mx = std::max(mx, A.at(base + j * sp.inner));
      T denom = T(0);
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const T e = std::exp(A.at(base + j * sp.inner) - mx);
        nd.out.at(base + j * sp.inner) = e;
        denom += e;
      }
      for (std::int64_t j = 0; j < sp.n; ++j) nd.out.at(base + j * sp.inner) /= denom;
    }
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::log_softmax(Value a, int axis) -> Value {
  if (a.tape != this) throw StateError("log_softmax: value from a different tape");
  const Tensor& A = value(a.id);
  check_axis("log_softmax", A.shape, axis);
  const AxisSpan sp = axis_span(A.shape, axis);
  Node nd;
  nd.op = Op::log_softmax;
  nd.in = {a.id, -1};
  nd.axis = axis;
  nd.out = Tensor(A.shape);
  nd.aux = Tensor(A.shape);  // softmax probabilities for backward
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.n * sp.inner + in;
      T mx = A.at(base);
      for (std::int64_t j = 1; j < sp.n; ++j) mx = std::max(mx, A.at(base + j * sp.inner));
      T denom = T(0);
      for (std::int64_t j = 0; j < sp.n; ++j) denom += std::exp(A.at(base + j * sp.inner) - mx);
      const T log_denom = std::log(denom);
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const std::int64_t idx = base + j * sp.inner;
        nd.out.at(idx) = A.at(idx) - mx - log_denom;
        nd.aux.at(idx) = std::exp(nd.out.at(idx));
      }
    }
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::batch_norm(Value x, Value gamma, Value beta, Tensor& running_mean,
                          Tensor& running_var, bool training, T momentum, T eps) -> Value {
  if (x.tape != this || gamma.tape != this || beta.tape != this) {
    throw StateError("batch_norm: values from a different tape");
  }
  const Tensor& X = value(x.id);
  const Tensor& G = value(gamma.id);
  const Tensor& Bt = value(beta.id);
  if (X.rank() != 2 || G.rank() != 1 || Bt.rank() != 1 || G.shape[0] != X.shape[1] ||
      Bt.shape[0] != X.shape[1] || running_mean.shape != G.shape || running_var.shape != G.shape) {
    throw DimensionError("batch_norm: shape mismatch x=" + shape_str(X.shape) +
                         " gamma=" + shape_str(G.shape) + " beta=" + shape_str(Bt.shape));
  }
  const std::int64_t B = X.shape[0], F = X.shape[1];
  if (training && B < 2) {
    throw DimensionError("batch_norm: train mode needs batch size >= 2, got " + std::to_string(B));
  }
  Node nd;
  nd.op = Op::batch_norm;
  nd.in = {x.id, gamma.id};
  nd.more_in = {beta.id};
  nd.axis = training ? 1 : 0;
  nd.out = Tensor(Shape{B, F});
  nd.aux = Tensor(Shape{B, F});  // normalized input
  nd.aux2 = Tensor(Shape{F});    // inverse stddev
  for (std::int64_t f = 0; f < F; ++f) {
    T m, istd;
    if (training) {
      T s = T(0);
      for (std::int64_t b = 0; b < B; ++b) s += X.at(b, f);
      m = s / T(B);
      T v = T(0);
      for (std::int64_t b = 0; b < B; ++b) {
        const T d = X.at(b, f) - m;
        v += d * d;
      }
      v /= T(B);
      istd = T(1) / std::sqrt(v + eps);
      running_mean.at(f) = (T(1) - momentum) * running_mean.at(f) + momentum * m;
      running_var.at(f) =
          (T(1) - momentum) * running_var.at(f) + momentum * v * T(B) / T(B - 1);
    } else {
      m = running_mean.at(f);
      istd = T(1) / std::sqrt(running_var.at(f) + eps);
    }
    nd.aux2.at(f) = istd;
    for (std::int64_t b = 0; b < B; ++b) {
      const T xh = (X.at(b, f) - m) * istd;
      nd.aux.at(b, f) = xh;
      nd.out.at(b, f) = G.at(f) * xh + Bt.at(f);
    }
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::dropout(Value a, double rate, std::mt19937_64& rng) -> Value {
  if (a.tape != this) throw StateError("dropout: value from a different tape");
  if (rate < 0.0 || rate >= 1.0) {
    throw ParameterError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  const Tensor& A = value(a.id);
  const T keep = T(1.0 - rate);
  Node nd;
  nd.op = Op::dropout;
  nd.in = {a.id, -1};
  nd.aux = Tensor(A.shape);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (std::int64_t i = 0; i < A.numel(); ++i) {
    nd.aux.at(i) = uni(rng) < rate ? T(0) : T(1) / keep;
  }
  nd.out = Tensor(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) nd.out.at(i) = A.at(i) * nd.aux.at(i);
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::sum(Value a) -> Value {
  if (a.tape != this) throw StateError("sum: value from a different tape");
  Node nd;
  nd.op = Op::sum;
  nd.in = {a.id, -1};
  nd.axis = -1;
  T s = T(0);
  for (auto v : value(a.id).data) s += v;
  nd.out = Tensor::scalar(s);
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::sum(Value a, int axis) -> Value {
  if (a.tape != this) throw StateError("sum: value from a different tape");
  const Tensor& A = value(a.id);
  check_axis("sum", A.shape, axis);
  const AxisSpan sp = axis_span(A.shape, axis);
  Node nd;
  nd.op = Op::sum;
  nd.in = {a.id, -1};
  nd.axis = axis;
  nd.out = Tensor(drop_axis(A.shape, axis));
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      T s = T(0);
      for (std::int64_t j = 0; j < sp.n; ++j) s += A.at(o * sp.n * sp.inner + j * sp.inner + in);
      nd.out.at(o * sp.inner + in) = s;
    }
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::mean(Value a) -> Value {
  const std::int64_t n = value(a.id).numel();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), T(1) / T(n));
}

template <class T>
auto TapeT<T>::mean(Value a, int axis) -> Value {
  const Tensor& A = value(a.id);
  check_axis("mean", A.shape, axis);
  return scale(sum(a, axis), T(1) / T(A.shape[static_cast<std::size_t>(axis)]));
}

template <class T>
auto TapeT<T>::concat(const std::vector<Value>& xs, int axis) -> Value {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  for (const auto& v : xs) {
    if (v.tape != this) throw StateError("concat: value from a different tape");
  }
  const Shape& first = value(xs[0].id).shape;
  check_axis("concat", first, axis);
  Shape out_shape = first;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = value(xs[i].id).shape;
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    for (int d = 0; d < static_cast<int>(s.size()); ++d) {
      if (d == axis) continue;
      if (s[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  Node nd;
  nd.op = Op::concat;
  nd.axis = axis;
  for (const auto& v : xs) nd.more_in.push_back(v.id);
  nd.out = Tensor(out_shape);
  const AxisSpan osp = axis_span(out_shape, axis);
  std::int64_t offset = 0;
  for (const auto& v : xs) {
    const Tensor& X = value(v.id);
    const AxisSpan sp = axis_span(X.shape, axis);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t j = 0; j < sp.n; ++j) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
          nd.out.at(o * osp.n * osp.inner + (offset + j) * osp.inner + in) =
              X.at(o * sp.n * sp.inner + j * sp.inner + in);
        }
      }
    }
    offset += sp.n;
  }
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::grl(Value a, T lambda) -> Value {
  if (a.tape != this) throw StateError("grl: value from a different tape");
  if (lambda < T(0)) {
    throw ParameterError("grl: lambda must be non-negative, got " + std::to_string(lambda));
  }
  Node nd;
  nd.op = Op::grl;
  nd.in = {a.id, -1};
  nd.scalar = lambda;
  nd.out = value(a.id);
  return wrap(emit(std::move(nd)));
}

template <class T>
auto TapeT<T>::cross_entropy(Value logits, const std::vector<int>& targets,
                             const std::vector<T>& class_weights) -> Value {
  if (logits.tape != this) throw StateError("cross_entropy: value from a different tape");
  const Tensor& L = value(logits.id);
  if (L.rank() != 2) throw DimensionError("cross_entropy: logits must be [B,C], got " + shape_str(L.shape));
  const std::int64_t B = L.shape[0], C = L.shape[1];
  if (static_cast<std::int64_t>(targets.size()) != B) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                         std::to_string(B));
  }
  if (static_cast<std::int64_t>(class_weights.size()) != C) {
    throw DimensionError("cross_entropy: " + std::to_string(class_weights.size()) +
                         " class weights for " + std::to_string(C) + " classes");
  }
  for (auto w : class_weights) {
    if (!(w > T(0))) throw ParameterError("cross_entropy: class weights must be positive");
  }
  for (std::int64_t i = 0; i < B; ++i) {
    if (targets[static_cast<std::size_t>(i)] < 0 || targets[static_cast<std::size_t>(i)] >= C) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[static_cast<std::size_t>(i)]) +
                       " out of range [0," + std::to_string(C) + ") at row " + std::to_string(i));
    }
  }
  Node nd;
  nd.op = Op::cross_entropy;
  nd.in = {logits.id, -1};
  nd.targets = targets;
  nd.class_weights = class_weights;
  nd.aux = Tensor(L.shape);  // softmax probabilities
  T wsum = T(0), loss = T(0);
  for (std::int64_t i = 0; i < B; ++i) {
    T mx = L.at(i, 0);
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, L.at(i, c));
    T denom = T(0);
    for (std::int64_t c = 0; c < C; ++c) denom += std::exp(L.at(i, c) - mx);
    const T log_denom = std::log(denom);
    for (std::int64_t c = 0; c < C; ++c) nd.aux.at(i, c) = std::exp(L.at(i, c) - mx) / denom;
    const int y = targets[static_cast<std::size_t>(i)];
    const T w = class_weights[static_cast<std::size_t>(y)];
    loss -= w * (L.at(i, y) - mx - log_denom);
    wsum += w;
  }
  nd.scalar = wsum;
  nd.out = Tensor::scalar(loss / wsum);
  return wrap(emit(std::move(nd)));
}

template <class T>
void TapeT<T>::accumulate(int id, const Tensor& g) {
  Tensor& dst = grads_[static_cast<std::size_t>(id)];
  for (std::int64_t i = 0; i < g.numel(); ++i) dst.at(i) += g.at(i);
}

template <class T>
void TapeT<T>::backward(Value loss) {
  if (loss.tape != this) throw StateError("backward: loss from a different tape");
  const Node& ln = node_checked(loss.id, "backward");
  if (ln.out.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.out.shape));
  }
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const auto& n : nodes_) grads_.emplace_back(n.out.shape);
  grads_[static_cast<std::size_t>(loss.id)].at(0) = T(1);
  for (int id = loss.id; id >= 0; --id) backward_node(id);
}

template <class T>
void TapeT<T>::backward_node(int id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = grads_[static_cast<std::size_t>(id)];
  switch (n.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].out;
      const Tensor& B = nodes_[static_cast<std::size_t>(n.in[1])].out;
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      Tensor& dB = grads_[static_cast<std::size_t>(n.in[1])];
      const std::int64_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
      // dA += g * B^T ; dB += A^T * g
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < p; ++j) {
          const T gij = g.at(i, j);
          if (gij == T(0)) continue;
          for (std::int64_t q = 0; q < k; ++q) dA.at(i, q) += gij * B.at(q, j);
        }
      }
      for (std::int64_t q = 0; q < k; ++q) {
        for (std::int64_t i = 0; i < m; ++i) {
          const T aiq = A.at(i, q);
          if (aiq == T(0)) continue;
          for (std::int64_t j = 0; j < p; ++j) dB.at(q, j) += aiq * g.at(i, j);
        }
      }
      break;
    }
    case Op::transpose: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < n.out.shape[0]; ++i)
        for (std::int64_t j = 0; j < n.out.shape[1]; ++j) dA.at(j, i) += g.at(i, j);
      break;
    }
    case Op::reshape: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < g.numel(); ++i) dA.at(i) += g.at(i);
      break;
    }
    case Op::add: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      Tensor& dB = grads_[static_cast<std::size_t>(n.in[1])];
      for (std::int64_t i = 0; i < g.numel(); ++i) dA.at(i) += g.at(i);
      if (n.axis == 0) {
        for (std::int64_t i = 0; i < g.numel(); ++i) dB.at(i) += g.at(i);
      } else {
        for (std::int64_t i = 0; i < g.shape[0]; ++i)
          for (std::int64_t j = 0; j < g.shape[1]; ++j) dB.at(j) += g.at(i, j);
      }
      break;
    }
    case Op::scale: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < g.numel(); ++i) dA.at(i) += n.scalar * g.at(i);
      break;
    }
    case Op::mul: {
      const Tensor& A = nodes_[static_cast<std::size_t>(n.in[0])].out;
      const Tensor& B = nodes_[static_cast<std::size_t>(n.in[1])].out;
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      Tensor& dB = grads_[static_cast<std::size_t>(n.in[1])];
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        dA.at(i) += g.at(i) * B.at(i);
        dB.at(i) += g.at(i) * A.at(i);
      }
      break;
    }
    case Op::relu: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        if (n.out.at(i) > T(0)) dA.at(i) += g.at(i);
      }
      break;
    }
    case Op::softmax: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      const AxisSpan sp = axis_span(n.out.shape, n.axis);
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
          const std::int64_t base = o * sp.n * sp.inner + in;
          T dot = T(0);
          for (std::int64_t j = 0; j < sp.n; ++j) {
            const std::int64_t idx = base + j * sp.inner;
            dot += g.at(idx) * n.out.at(idx);
          }
          for (std::int64_t j = 0; j < sp.n; ++j) {
            const std::int64_t idx = base + j * sp.inner;
            dA.at(idx) += n.out.at(idx) * (g.at(idx) - dot);
          }
        }
      }
      break;
    }
    case Op::log_softmax: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      const AxisSpan sp = axis_span(n.out.shape, n.axis);
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
          const std::int64_t base = o * sp.n * sp.inner + in;
          T gsum = T(0);
          for (std::int64_t j = 0; j < sp.n; ++j) gsum += g.at(base + j * sp.inner);
          for (std::int64_t j = 0; j < sp.n; ++j) {
            const std::int64_t idx = base + j * sp.inner;
            dA.at(idx) += g.at(idx) - n.aux.at(idx) * gsum;
          }
        }
      }
      break;
    }
    case Op::batch_norm: {
      const Tensor& G = nodes_[static_cast<std::size_t>(n.in[1])].out;  // gamma
      Tensor& dX = grads_[static_cast<std::size_t>(n.in[0])];
      Tensor& dG = grads_[static_cast<std::size_t>(n.in[1])];
      Tensor& dB = grads_[static_cast<std::size_t>(n.more_in[0])];
      const std::int64_t B = n.out.shape[0], F = n.out.shape[1];
      const bool training = n.axis == 1;
      for (std::int64_t f = 0; f < F; ++f) {
        T sum_g = T(0), sum_gx = T(0);
        for (std::int64_t b = 0; b < B; ++b) {
          sum_g += g.at(b, f);
          sum_gx += g.at(b, f) * n.aux.at(b, f);
        }
        dB.at(f) += sum_g;
        dG.at(f) += sum_gx;
        const T istd = n.aux2.at(f);
        if (training) {
          // dx = istd/B * (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
          const T k1 = G.at(f) * sum_g;   // sum of dxhat
          const T k2 = G.at(f) * sum_gx;  // sum of dxhat*xhat
          for (std::int64_t b = 0; b < B; ++b) {
            const T dxhat = G.at(f) * g.at(b, f);
            dX.at(b, f) += istd / T(B) * (T(B) * dxhat - k1 - n.aux.at(b, f) * k2);
          }
        } else {
          for (std::int64_t b = 0; b < B; ++b) dX.at(b, f) += G.at(f) * istd * g.at(b, f);
        }
      }
      break;
    }
    case Op::dropout: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < g.numel(); ++i) dA.at(i) += g.at(i) * n.aux.at(i);
      break;
    }
    case Op::sum: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      if (n.axis < 0) {
        const T gv = g.at(0);
        for (std::int64_t i = 0; i < dA.numel(); ++i) dA.at(i) += gv;
      } else {
        const AxisSpan sp = axis_span(dA.shape, n.axis);
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t j = 0; j < sp.n; ++j)
            for (std::int64_t in = 0; in < sp.inner; ++in)
              dA.at(o * sp.n * sp.inner + j * sp.inner + in) += g.at(o * sp.inner + in);
      }
      break;
    }
    case Op::mean:
      break;  // lowered to sum+scale at record time
    case Op::concat: {
      const AxisSpan osp = axis_span(n.out.shape, n.axis);
      std::int64_t offset = 0;
      for (int src : n.more_in) {
        Tensor& dX = grads_[static_cast<std::size_t>(src)];
        const AxisSpan sp = axis_span(dX.shape, n.axis);
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t j = 0; j < sp.n; ++j)
            for (std::int64_t in = 0; in < sp.inner; ++in)
              dX.at(o * sp.n * sp.inner + j * sp.inner + in) +=
                  g.at(o * osp.n * osp.inner + (offset + j) * osp.inner + in);
        offset += sp.n;
      }
      break;
    }
    case Op::grl: {
      Tensor& dA = grads_[static_cast<std::size_t>(n.in[0])];
      for (std::int64_t i = 0; i < g.numel(); ++i) dA.at(i) += -n.scalar * g.at(i);
      break;
    }
    case Op::cross_entropy: {
      Tensor& dL = grads_[static_cast<std::size_t>(n.in[0])];
      const std::int64_t B = n.aux.shape[0], C = n.aux.shape[1];
      const T gv = g.at(0);
      for (std::int64_t i = 0; i < B; ++i) {
        const int y = n.targets[static_cast<std::size_t>(i)];
        const T w = n.class_weights[static_cast<std::size_t>(y)] / n.scalar;
        for (std::int64_t c = 0; c < C; ++c) {
          const T ind = c == y ? T(1) : T(0);
          dL.at(i, c) += gv * w * (n.aux.at(i, c) - ind);
        }
      }
      break;
    }
  }
}

template <class T>
auto TapeT<T>::gradients() const -> std::map<std::string, Tensor> {
  if (grads_.size() != nodes_.size()) {
    throw StateError("gradients: backward has not run on this tape");
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : named_) out[name] = grads_[static_cast<std::size_t>(id)];
  return out;
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace idfe
