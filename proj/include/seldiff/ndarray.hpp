#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seldiff/error.hpp"

namespace seldiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

/// Dense row-major array of doubles. Rank 0 is a scalar holding one value.
class NdArray {
 public:
  NdArray() : data_(1, 0.0) {}

  explicit NdArray(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  NdArray(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorKind::kShape, "NdArray: shape ", shape_str(shape_),
           " needs ", shape_size(shape_), " values, got ", data_.size());
    }
  }

  static NdArray scalar(double v) { return NdArray(Shape{}, std::vector<double>{v}); }

  static NdArray from(std::initializer_list<double> values) {
    return NdArray(Shape{values.size()}, std::vector<double>(values));
  }

  static NdArray identity(std::size_t n) {
    NdArray out(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) out.data_[i * n + i] = 1.0;
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) {
      fail(ErrorKind::kShape, "item: array of shape ", shape_str(shape_),
           " is not a scalar");
    }
    return data_[0];
  }

  /// Index by multi-index; debug-friendly, not for hot loops.
  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }

  NdArray reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      fail(ErrorKind::kShape, "reshape: cannot view ", shape_str(shape_), " as ",
           shape_str(shape));
    }
    return NdArray(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      fail(ErrorKind::kShape, "at: rank ", index.size(), " index into array of shape ",
           shape_str(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) {
        fail(ErrorKind::kRange, "at: index ", i, " out of range on axis ", axis,
             " of ", shape_str(shape_));
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "max_abs_diff: ", shape_str(a.shape()), " vs ",
         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace seldiff
