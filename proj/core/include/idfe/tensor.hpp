#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "idfe/errors.hpp"

namespace idfe {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor. Rank 0 is a scalar. double is used by tests and
// oracles, float by the training path.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(Shape s) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
  }

  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  static TensorT scalar(T v) { return TensorT(Shape{}, std::vector<T>{v}); }

  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  T at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  T at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }

  T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  TensorT reshaped(Shape s) const {
    if (shape_numel(s) != numel()) {
      throw DimensionError("reshape: cannot view " + shape_str(shape) + " as " + shape_str(s));
    }
    return TensorT(std::move(s), data);
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> r;
    r.shape = shape;
    r.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) r.data[i] = static_cast<U>(data[i]);
    return r;
  }

 private:
  static void check_shape(const Shape& s) {
    for (auto e : s) {
      if (e < 0) throw DimensionError("tensor: negative extent in shape " + shape_str(s));
    }
  }
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace idfe
