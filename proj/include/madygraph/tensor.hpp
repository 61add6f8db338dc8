// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mdg {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a serialized file cannot be decoded.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

template <std::floating_point T>
constexpr Dtype dtype_of() {
  return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;
}

/// Dense row-major N-d array. Value semantics; copies are deep.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(mdg::numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    detail::require_shape(data_.size() == mdg::numel(shape_),
                          "tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + mdg::to_string(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
  static Tensor from(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  template <class Rng>
  static Tensor uniform(Shape s, T lo, T hi, Rng& rng) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data_) v = static_cast<T>(d(rng));
    return t;
  }

  template <class Rng>
  static Tensor normal(Shape s, T mean, T stddev, Rng& rng) {
    Tensor t(std::move(s));
    std::normal_distribution<double> d(mean, stddev);
    for (auto& v : t.data_) v = static_cast<T>(d(rng));
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() & noexcept { return data_; }
  std::span<const T> data() const& noexcept { return data_; }
  std::span<const T> data() && = delete;  // would dangle
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Flat offset of a full multi-index.
  template <std::integral... I>
  std::size_t offset(I... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    detail::require_shape(sizeof...(I) == shape_.size(), "index rank does not match tensor rank");
    std::size_t off = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) off = off * shape_[d] + ids[d];
    return off;
  }

  template <std::integral... I>
  T& at(I... idx) {
    return data_[offset(idx...)];
  }
  template <std::integral... I>
  T at(I... idx) const {
    return data_[offset(idx...)];
  }

  T item() const {
    detail::require_shape(data_.size() == 1, "item() on tensor with " + std::to_string(data_.size()) + " elements");
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    detail::require_shape(mdg::numel(s) == data_.size(),
                          "cannot reshape " + mdg::to_string(shape_) + " to " + mdg::to_string(s));
    return Tensor(std::move(s), data_);
  }

  void reshape_inplace(Shape s) {
    detail::require_shape(mdg::numel(s) == data_.size(),
                          "cannot reshape " + mdg::to_string(shape_) + " to " + mdg::to_string(s));
    shape_ = std::move(s);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <std::floating_point U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Largest absolute elementwise difference; shapes must agree.
template <std::floating_point T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_shape(a.shape() == b.shape(),
                        "max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace mdg
