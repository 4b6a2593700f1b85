#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sfsci/errors.hpp"

namespace sfsci {

/// Dense row-major array of rank 1..4. Three-dimensional tensors are laid
/// out as (channel, row, column), which is also the on-disk cube order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::initializer_list<std::size_t> shape, T fill = T(0))
      : Tensor(std::vector<std::size_t>(shape), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw DimensionError("tensor data size does not match shape");
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 3-D accessors (channel, row, col).
  T& operator()(std::size_t c, std::size_t r, std::size_t k) noexcept {
    return data_[(c * shape_[1] + r) * shape_[2] + k];
  }
  const T& operator()(std::size_t c, std::size_t r, std::size_t k) const noexcept {
    return data_[(c * shape_[1] + r) * shape_[2] + k];
  }

  std::span<T> plane(std::size_t c) {
    const std::size_t n = shape_[1] * shape_[2];
    return std::span<T>(data_).subspan(c * n, n);
  }
  std::span<const T> plane(std::size_t c) const {
    const std::size_t n = shape_[1] * shape_[2];
    return std::span<const T>(data_).subspan(c * n, n);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(*this, o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(*this, o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }
  friend Tensor operator*(T s, Tensor a) { return a *= s; }

  bool operator==(const Tensor&) const = default;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape_ != b.shape_) {
      throw DimensionError(std::string("shape mismatch in ") + what + ": " + shape_string(a.shape_) +
                           " vs " + shape_string(b.shape_));
    }
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T>::require_same_shape(a, b, "dot");
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return static_cast<T>(acc);
}

template <typename T>
T norm2(const Tensor<T>& a) {
  return std::sqrt(dot(a, a));
}

template <typename T>
T sum(const Tensor<T>& a) {
  long double acc = 0;
  for (auto v : a.vec()) acc += v;
  return static_cast<T>(acc);
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (auto v : a.vec()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.vec().begin(), a.vec().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T mse(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T>::require_same_shape(a, b, "mse");
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    acc += d * d;
  }
  return static_cast<T>(acc / static_cast<long double>(a.size()));
}

}  // namespace sfsci
