#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lfuse/error.hpp"

namespace lfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// "[2x3x4]"
inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major tensor. A plain value type: the tape wraps it in
// shared_ptr<const Tensor> once it has been recorded.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers: rank-1 tensors are treated as a single row.
  std::size_t rows() const {
    return rank() <= 1 ? 1 : numel() / shape_.back();
  }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const T* ptr() const { return data_.data(); }
  T* ptr() { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace lfuse
