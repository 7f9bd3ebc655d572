#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tcslot/errors.hpp"

namespace tcslot {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

/// Dense row-major array. Feature maps are stored channel-first (C, H, W).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  T& at(int ch, int y, int x) {
    return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(int ch, int y, int x) const {
    return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

 private:
  void validate_shape() const {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> random_uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, T mean, T stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace tcslot
