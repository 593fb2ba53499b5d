#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cadnet/error.hpp"

namespace cadnet {

using Shape = std::vector<int>;

inline std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int extent : shape) {
    if (extent <= 0) throw config_error("tensor extents must be positive, got " + shape_to_string(shape));
    n *= extent;
  }
  return n;
}

/// Dense row-major tensor of arbitrary rank. Values live in a flat vector;
/// rank-specific indexing helpers cover the ranks the model actually uses.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), T{0}) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw config_error("tensor data size does not match shape " + shape_to_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::vector<T>(values)) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i) { return data_[flat1(i)]; }
  const T& operator()(int i) const { return data_[flat1(i)]; }
  T& operator()(int i, int j) { return data_[flat2(i, j)]; }
  const T& operator()(int i, int j) const { return data_[flat2(i, j)]; }
  T& operator()(int i, int j, int k) { return data_[flat3(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[flat3(i, j, k)]; }
  T& operator()(int i, int j, int k, int l) { return data_[flat4(i, j, k, l)]; }
  const T& operator()(int i, int j, int k, int l) const { return data_[flat4(i, j, k, l)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Returns a tensor sharing no storage but holding the same values under a
  /// new shape. Element count must match.
  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw config_error("reshape from " + shape_to_string(shape_) + " to " +
                         shape_to_string(new_shape) + " changes element count");
    return Tensor(std::move(new_shape), data_);
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void require_finite(const char* context) const {
    if (!all_finite()) throw numeric_error(std::string(context) + ": non-finite value in tensor");
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[static_cast<std::int64_t>(i)] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::size_t flat1(int i) const { return static_cast<std::size_t>(i); }
  std::size_t flat2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t flat3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t flat4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace cadnet
