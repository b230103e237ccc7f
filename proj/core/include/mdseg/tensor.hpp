#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mdseg/common.hpp"

namespace mdseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major n-dimensional array. Immutable by convention once handed
/// to the graph; float for training, double for verification.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_numel(shape_),
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  bool is_scalar() const { return data_.size() == 1; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors, valid for rank-4 tensors.
  std::size_t n() const { return shape_[0]; }
  std::size_t c() const { return shape_[1]; }
  std::size_t h() const { return shape_[2]; }
  std::size_t w() const { return shape_[3]; }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  // Rank-2 accessor.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = U(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace mdseg
