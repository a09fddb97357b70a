#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mfp/error.hpp"
#include "mfp/random.hpp"

namespace mfp {

enum class DType { F32, F64 };

// Extents are signed so that a negative request can be rejected instead of
// silently wrapping around.
using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);

// Product of extents; throws ShapeError on an empty shape or a non-positive
// extent.
std::int64_t checked_numel(const Shape& shape);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

// Parameters for a reproducible random fill.
struct RandomFill {
  std::uint64_t seed = 0;
  double lo = -1.0;
  double hi = 1.0;
};

// Dense row-major array. Axis order for feature maps is (batch, channel,
// height, width).
template <typename T>
class Tensor {
 public:
  static constexpr DType dtype = dtype_of<T>();

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor filled(Shape shape, T value) { return Tensor(std::move(shape), value); }

  static Tensor random(Shape shape, const RandomFill& fill) {
    Tensor t(std::move(shape));
    Rng rng(fill.seed);
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(fill.lo, fill.hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessor for BCHW tensors.
  T& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::int64_t checked_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: no extents");
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 1) throw ShapeError("invalid shape " + shape_str(shape) + ": extents must be >= 1");
    n *= e;
  }
  return n;
}

}  // namespace mfp
