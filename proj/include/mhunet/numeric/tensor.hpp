#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mhunet/errors.hpp"

#ifndef MHUNET_REAL
#define MHUNET_REAL double
#endif

namespace mhunet {

/// Element precision of every tensor in the build. Verification suites require double.
using real = MHUNET_REAL;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array with shared immutable storage. Copies are shallow;
/// every operation produces a fresh tensor, so a Tensor may be shared across threads.
class Tensor {
 public:
  Tensor() : Tensor(Shape{1}, std::vector<real>{0}) {}

  Tensor(Shape shape, std::vector<real> data, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    if (shape_.empty()) throw DimensionError("tensor rank must be >= 1");
    for (auto e : shape_)
      if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape_));
    if (shape_numel(shape_) != data.size())
      throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data.size()) + " values");
    data_ = std::make_shared<const std::vector<real>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0); }
  static Tensor full(Shape shape, real value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<real>(n, value));
  }
  static Tensor scalar(real v) { return Tensor(Shape{1}, {v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<real>> rows) {
    std::vector<real> d;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(d));
  }
  static Tensor vector(std::vector<real> v) {
    auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor identity(std::size_t n) {
    std::vector<real> d(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1;
    return Tensor(Shape{n, n}, std::move(d));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const real> data() const noexcept { return {data_->data(), data_->size()}; }
  const std::vector<real>& vec() const noexcept { return *data_; }
  real operator[](std::size_t i) const { return (*data_)[i]; }
  real item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }
  real at(std::size_t i, std::size_t j) const { return (*data_)[i * shape_[1] + j]; }
  real at(std::size_t i, std::size_t j, std::size_t k) const {
    return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const {
    Tensor t = *this;
    t.requires_grad_ = flag;
    return t;
  }

  /// Same storage, new extents.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_->begin(), data_->end(), [](real v) { return std::isfinite(v); });
  }

  /// Bitwise equality of shape and values.
  bool identical(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data_->data(), other.data_->data(), size() * sizeof(real)) == 0;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<real>> data_;
  bool requires_grad_ = false;
};

inline real max_abs_diff(std::span<const real> a, std::span<const real> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff: length mismatch");
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return max_abs_diff(a.data(), b.data());
}

}  // namespace mhunet
