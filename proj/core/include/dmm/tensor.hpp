#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dmm/rng.hpp"

namespace dmm {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Real T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array. The element width is fixed by T; float tensors are
// used for training, double tensors for oracles and gradient checks.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  // Zero-filled. Every dimension must be at least 1 and the shape non-empty.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, T fill);
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Bounds-checked multi-index access.
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  // Same data, new shape with equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  // Copy of the slice along axis 0 at position i (rank drops by one; a
  // rank-1 tensor yields shape [1]).
  [[nodiscard]] Tensor slice0(std::size_t i) const;

  void fill(T value);

  template <Real U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

enum class BinaryOp { add, sub, mul };

template <Real T>
Tensor<T> zeros(const Shape& shape) {
  return Tensor<T>(shape);
}

template <Real T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }

template <Real T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// a[p x q] * b[q x r].
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Arithmetic mean over the listed axes; remaining axes keep their order.
// Reducing every axis yields shape [1].
template <Real T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<std::size_t>& axes);

template <Real T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

template <Real T>
bool all_finite(const Tensor<T>& a);

template <Real T>
Tensor<T> gaussian(Rng& rng, const Shape& shape, double mean, double stddev);

// Draws in [lo, hi).
template <Real T>
Tensor<T> uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace dmm
