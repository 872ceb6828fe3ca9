#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vidkern/core/error.hpp"
#include "vidkern/core/rng.hpp"

namespace vidkern {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles with rank 1..5 and positive extents.
///
/// A default-constructed Tensor is an empty placeholder (rank 0) and is only
/// valid as an assignment target.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape dims, double fill = 0.0) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(shape_volume(dims_), fill);
  }

  Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims(dims_);
    if (data_.size() != shape_volume(dims_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match dims " + shape_str(dims_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor uniform(Shape dims, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    for (double& v : t.data_) v = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(Shape dims, SplitMix64& rng, double stddev = 1.0) {
    Tensor t(std::move(dims));
    for (double& v : t.data_) v = rng.normal(0.0, stddev);
    return t;
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return dims_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
  double& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

  // Only meaningful for size-1 tensors.
  double item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor " + shape_str(dims_));
    return data_[0];
  }

  Tensor reshaped(Shape dims) const {
    if (shape_volume(dims) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  Tensor& operator+=(const Tensor& other) {
    require_same(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void require_same(const Tensor& other, const char* what) const {
    if (dims_ != other.dims_) {
      throw ShapeError(std::string(what) + ": dims " + shape_str(dims_) + " vs " +
                       shape_str(other.dims_));
    }
  }

 private:
  static void validate_dims(const Shape& dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
      throw ShapeError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                       std::to_string(dims.size()));
    }
    for (std::size_t d : dims) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(dims));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != dims_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) + " for tensor " +
                       shape_str(dims_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= dims_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
      off = off * dims_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape dims_;
  std::vector<double> data_;
};

inline bool operator==(const Tensor& a, const Tensor& b) {
  return a.dims() == b.dims() && std::ranges::equal(a.data(), b.data());
}

// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.dims() == b.dims() &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sum(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0);
}

}  // namespace vidkern
