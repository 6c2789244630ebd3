#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "idfe/errors.hpp"
#include "idfe/tensor.hpp"

namespace idfe {

// Reverse-mode engine over dense tensors. A tape records one forward pass;
// backward replays it in exact reverse order. One tape per thread per pass.

enum class Op : std::uint8_t {
  leaf,
  matmul,
  transpose,
  reshape,
  add,
  scale,
  mul,
  relu,
  softmax,
  log_softmax,
  batch_norm,
  dropout,
  sum,
  mean,
  concat,
  grl,
  cross_entropy,
};

const char* op_name(Op op);

template <class T>
class TapeT;

// Lightweight handle to a recorded node.
template <class T>
struct ValueT {
  TapeT<T>* tape = nullptr;
  int id = -1;

  const TensorT<T>& data() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape; }
};

template <class T>
class TapeT {
 public:
  using Tensor = TensorT<T>;
  using Value = ValueT<T>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Leaves.
  Value leaf(Tensor v);
  // Named leaf whose gradient appears in gradients().
  Value param(const std::string& name, const Tensor& v);

  // Forward ops. Shape mismatches raise DimensionError naming the op.
  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value reshape(Value a, Shape s);
  Value add(Value a, Value b);  // same shape, or [m,n] + [n] row broadcast
  Value scale(Value a, T c);
  Value mul(Value a, Value b);  // elementwise
  Value relu(Value a);
  Value softmax(Value a, int axis);
  Value log_softmax(Value a, int axis);
  // Train mode normalizes by batch statistics and updates the running
  // buffers in place (momentum 0.1 by default, unbiased variance in the
  // running update). Eval mode is a pure affine map of the running stats.
  Value batch_norm(Value x, Value gamma, Value beta, Tensor& running_mean, Tensor& running_var,
                   bool training, T momentum = T(0.1), T eps = T(1e-5));
  // Inverted scaling: retained entries are divided by (1 - rate) so eval
  // mode is the identity. Consumes one uniform draw per element.
  Value dropout(Value a, double rate, std::mt19937_64& rng);
  Value sum(Value a);  // all elements -> scalar
  Value sum(Value a, int axis);
  Value mean(Value a);
  Value mean(Value a, int axis);
  Value concat(const std::vector<Value>& xs, int axis);
  // Gradient reversal: identity forward, backward multiplies by -lambda.
  Value grl(Value a, T lambda);
  // Weighted softmax cross entropy over [B,C] logits, normalized by the sum
  // of the selected sample weights.
  Value cross_entropy(Value logits, const std::vector<int>& targets,
                      const std::vector<T>& class_weights);

  // Backward from a scalar loss node. May be called repeatedly; gradients
  // are recomputed from scratch each time.
  void backward(Value loss);

  const Tensor& value(int id) const;
  const Tensor& grad(int id) const;
  std::map<std::string, Tensor> gradients() const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Op op = Op::leaf;
    std::array<int, 2> in{-1, -1};
    std::vector<int> more_in;  // third input (batch_norm beta) / concat tail
    Tensor out;
    Tensor aux;   // op specific: dropout mask, xhat, softmax probs
    Tensor aux2;  // op specific: inverse stddev
    int axis = 0;
    T scalar = T(0);  // scale factor, grl lambda
    std::vector<int> targets;
    std::vector<T> class_weights;
  };

  int emit(Node n);
  Value wrap(int id) { return Value{this, id}; }
  const Node& node_checked(int id, const char* what) const;
  void backward_node(int id);
  void accumulate(int id, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<std::string, int>> named_;
};

using Tape = TapeT<double>;
using TapeF = TapeT<float>;
using Value = ValueT<double>;
using ValueF = ValueT<float>;

}  // namespace idfe
