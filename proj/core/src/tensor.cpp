#include "dmm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dmm/error.hpp"

namespace dmm {

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (const auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimension must be >= 1, got shape " + shape_string(shape));
  }
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <Real T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), T{0});
}

template <Real T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

template <Real T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return const_cast<T&>(std::as_const(*this).at(index));
}

template <Real T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (const auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    offset = offset * shape_[axis] + i;
    ++axis;
  }
  return data_[offset];
}

template <Real T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <Real T>
void Tensor<T>::reshape(Shape shape) {
  validate_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

template <Real T>
Tensor<T> Tensor<T>::slice0(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw ShapeError("slice0 index out of range");
  Shape rest(shape_.begin() + 1, shape_.end());
  if (rest.empty()) rest = {1};
  const std::size_t n = shape_size(rest);
  std::vector<T> values(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                        data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor(std::move(rest), std::move(values));
}

template <Real T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <Real T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto z = out.data();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
      break;
  }
  return out;
}

template <Real T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const auto p = static_cast<Eigen::Index>(a.dim(0));
  const auto q = static_cast<Eigen::Index>(a.dim(1));
  const auto r = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  Eigen::Map<const RowMatrix<T>> ma(a.raw(), p, q);
  Eigen::Map<const RowMatrix<T>> mb(b.raw(), q, r);
  Eigen::Map<RowMatrix<T>> mc(out.raw(), p, r);
  mc.noalias() = ma * mb;
  return out;
}

template <Real T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const std::size_t rank = a.rank();
  std::vector<bool> reduced(rank, false);
  for (const auto ax : axes) {
    if (ax >= rank) throw ShapeError("reduce_mean axis " + std::to_string(ax) + " out of range");
    if (reduced[ax]) throw ShapeError("reduce_mean duplicate axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= a.dim(i);
    } else {
      out_shape.push_back(a.dim(i));
    }
  }
  if (out_shape.empty()) out_shape = {1};

  // Row-major strides of the kept axes inside the output.
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (!reduced[i]) {
      out_stride[i] = stride;
      stride *= a.dim(i);
    }
  }

  std::vector<double> acc(shape_size(out_shape), 0.0);
  std::vector<std::size_t> index(rank, 0);
  const auto src = a.data();
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t target = 0;
    for (std::size_t i = 0; i < rank; ++i) target += index[i] * out_stride[i];
    acc[target] += static_cast<double>(src[flat]);
    for (std::size_t i = rank; i-- > 0;) {
      if (++index[i] < a.dim(i)) break;
      index[i] = 0;
    }
  }
  std::vector<T> values(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) values[i] = static_cast<T>(acc[i] / static_cast<double>(count));
  return Tensor<T>(std::move(out_shape), std::move(values));
}

template <Real T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <Real T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

template <Real T>
Tensor<T> gaussian(Rng& rng, const Shape& shape, double mean, double stddev) {
  if (!(stddev > 0.0) || !std::isfinite(stddev) || !std::isfinite(mean)) {
    throw std::invalid_argument("gaussian: stddev must be positive and finite");
  }
  Tensor<T> out(shape);
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <Real T>
Tensor<T> uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("uniform: requires finite lo < hi");
  }
  Tensor<T> out(shape);
  const T upper = static_cast<T>(hi);
  for (auto& v : out.data()) {
    T x = static_cast<T>(lo + (hi - lo) * rng.uniform01());
    // Rounding to T can land exactly on hi.
    if (x >= upper) x = std::nextafter(upper, static_cast<T>(lo));
    v = x;
  }
  return out;
}

#define DMM_INSTANTIATE_TENSOR(T)                                                              \
  template class Tensor<T>;                                                                    \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reduce_mean<T>(const Tensor<T>&, const std::vector<std::size_t>&);        \
  template double dot<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template bool all_finite<T>(const Tensor<T>&);                                               \
  template Tensor<T> gaussian<T>(Rng&, const Shape&, double, double);                          \
  template Tensor<T> uniform<T>(Rng&, const Shape&, double, double);

DMM_INSTANTIATE_TENSOR(float)
DMM_INSTANTIATE_TENSOR(double)

}  // namespace dmm
