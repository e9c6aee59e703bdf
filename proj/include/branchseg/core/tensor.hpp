#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "branchseg/core/shape.hpp"

namespace branchseg {

/// Dense n-d array in row-major (NCHW for image tensors) order.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(numel_of(shape_)), T(0)) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(static_cast<int64_t>(data_.size()) == numel_of(shape_),
                "tensor data length does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessors
  T& at(int n, int c, int y, int x) {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  // CHW accessors for 3-d images
  T& at(int c, int y, int x) {
    return data_[static_cast<size_t>((int64_t(c) * shape_[1] + y) * shape_[2] + x)];
  }
  const T& at(int c, int y, int x) const {
    return data_[static_cast<size_t>((int64_t(c) * shape_[1] + y) * shape_[2] + x)];
  }

  // HW accessors for 2-d masks/planes
  T& at(int y, int x) { return data_[static_cast<size_t>(int64_t(y) * shape_[1] + x)]; }
  const T& at(int y, int x) const { return data_[static_cast<size_t>(int64_t(y) * shape_[1] + x)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Mask = Tensor<uint8_t>;  // binary {0,1}, shape [H,W]

inline int64_t mask_count(const Mask& m) {
  int64_t n = 0;
  for (int64_t i = 0; i < m.numel(); ++i) n += m[i] ? 1 : 0;
  return n;
}

}  // namespace branchseg
