#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbrec {

#ifdef MBREC_USE_FLOAT32
using real = float;
#else
using real = double;
#endif

// Raised when operand extents do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a caller breaks a documented precondition (bad index, non-scalar root, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of `real`. Rank 0 is a scalar, rank 1 a vector and
/// rank 2 a matrix; row-wise operations treat a rank-1 array as a single row.
class Array {
 public:
  Array() : shape_{0} {}

  explicit Array(Shape shape, real fill = 0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Array(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("array data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Array scalar(real v) { return Array(Shape{}, std::vector<real>{v}); }

  static Array vector(std::initializer_list<real> values) {
    return Array(Shape{values.size()}, std::vector<real>(values));
  }

  static Array matrix(std::size_t rows, std::size_t cols, real fill = 0) {
    return Array(Shape{rows, cols}, fill);
  }

  static Array matrix(std::initializer_list<std::initializer_list<real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<real> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Array(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const {
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }

  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  const real& operator[](std::size_t i) const { return data_[i]; }

  real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const real& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<real> row(std::size_t r) { return std::span<real>(data_).subspan(r * cols(), cols()); }
  std::span<const real> row(std::size_t r) const {
    return std::span<const real>(data_).subspan(r * cols(), cols());
  }

  real item() const {
    if (data_.size() != 1) throw ContractError("item() on array of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](real x) { return std::isfinite(x); });
  }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<real> data_;
};

inline real squared_norm(const Array& a) {
  real s = 0;
  for (real x : a.data()) s += x * x;
  return s;
}

inline real max_abs_difference(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("cannot compare " + shape_string(a.shape()) + " with " +
                         shape_string(b.shape()));
  }
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max<real>(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mbrec
