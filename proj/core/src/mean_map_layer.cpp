#include "dmm/mean_map_layer.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "dmm/error.hpp"

namespace dmm {

namespace {
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

template <Real T>
MeanMapLayer<T>::MeanMapLayer(const RffBasis& basis, bool learn_frequencies, bool learn_scale)
    : seed_(basis.seed) {
  if (basis.normalization != Normalization::layer) {
    throw std::invalid_argument("MeanMapLayer requires a layer-normalized basis");
  }
  this->add_parameter("omegas", basis.omegas.template cast<T>(), learn_frequencies);
  this->add_parameter("offsets", basis.offsets.template cast<T>(), false);
  this->add_parameter("log_scale", Tensor<T>({1}, static_cast<T>(basis.log_scale)), learn_scale);
}

template <Real T>
RffBasis MeanMapLayer<T>::basis() const {
  RffBasis b;
  b.omegas = this->params_[0].value.template cast<double>();
  b.offsets = this->params_[1].value.template cast<double>();
  b.log_scale = log_scale();
  b.normalization = Normalization::layer;
  b.seed = seed_;
  return b;
}

template <Real T>
Tensor<T> MeanMapLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  if (inputs.size() != 1) throw ShapeError("mean_map: expects exactly one input");
  const Tensor<T>& c = *inputs[0];
  if (c.rank() != 4) throw ShapeError("mean_map: input must be [N, m, h, w]");
  if (c.dim(1) != input_dim()) {
    throw ShapeError("mean_map: input has " + std::to_string(c.dim(1)) + " channels, basis expects " +
                     std::to_string(input_dim()));
  }
  const T s = static_cast<T>(std::exp(log_scale()));
  Tensor<T> kernels = this->params_[0].value;
  for (auto& v : kernels.data()) v = s * v;
  kernels.reshape({frequencies(), input_dim(), 1, 1});

  input_ = c;
  pre_ = conv2d(c, kernels, this->params_[1].value, 1);
  has_cache_ = true;
  return global_avg_pool(cosine(pre_));
}

template <Real T>
typename MeanMapLayer<T>::Gradients MeanMapLayer<T>::backward_detailed(const Tensor<T>& grad_output) {
  if (!has_cache_) throw std::logic_error("mean_map: backward called before forward");
  const std::size_t n = input_.dim(0);
  const std::size_t m = input_dim();
  const std::size_t d_count = frequencies();
  const std::size_t positions = input_.dim(2) * input_.dim(3);
  if (grad_output.shape() != Shape{n, d_count}) throw ShapeError("mean_map backward: gradient shape mismatch");

  const double s = std::exp(log_scale());
  const RowMatrixD omega =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          this->params_[0].value.raw(), static_cast<Eigen::Index>(d_count), static_cast<Eigen::Index>(m))
          .template cast<double>();

  Gradients out;
  out.input = Tensor<T>(input_.shape());
  RowMatrixD domega = RowMatrixD::Zero(static_cast<Eigen::Index>(d_count), static_cast<Eigen::Index>(m));
  double dscale = 0.0;

  RowMatrixD g(static_cast<Eigen::Index>(d_count), static_cast<Eigen::Index>(positions));
  RowMatrixD c(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(positions));
  for (std::size_t i = 0; i < n; ++i) {
    const T* pre = pre_.raw() + i * d_count * positions;
    const T* x = input_.raw() + i * m * positions;
    for (std::size_t d = 0; d < d_count; ++d) {
      const double upstream = static_cast<double>(grad_output[i * d_count + d]) / static_cast<double>(positions);
      for (std::size_t p = 0; p < positions; ++p) {
        g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(p)) =
            -upstream * std::sin(static_cast<double>(pre[d * positions + p]));
      }
    }
    for (std::size_t k = 0; k < m * positions; ++k) c.data()[k] = static_cast<double>(x[k]);

    const RowMatrixD dc = s * (omega.transpose() * g);
    for (std::size_t k = 0; k < m * positions; ++k) out.input[i * m * positions + k] = static_cast<T>(dc.data()[k]);
    if (learn_frequencies()) domega.noalias() += g * c.transpose();
    if (learn_scale()) {
      const RowMatrixD u = omega * c;
      dscale += s * (g.array() * u.array()).sum();
    }
  }

  if (learn_frequencies()) {
    domega *= s;
    Tensor<T> grad({d_count, m});
    for (std::size_t k = 0; k < grad.size(); ++k) {
      grad[k] = static_cast<T>(domega.data()[k]);
      this->params_[0].grad[k] += grad[k];
    }
    out.omegas = std::move(grad);
  }
  if (learn_scale()) {
    this->params_[2].grad[0] += static_cast<T>(dscale);
    out.log_scale = dscale;
  }
  return out;
}

template <Real T>
std::vector<Tensor<T>> MeanMapLayer<T>::do_backward(const Tensor<T>& grad_output) {
  return {backward_detailed(grad_output).input};
}

template <Real T>
Tensor<T> extract_feature_set(const Tensor<T>& grid) {
  if (grid.rank() != 3) throw ShapeError("extract_feature_set: grid must be [m, h, w]");
  const std::size_t m = grid.dim(0);
  const std::size_t positions = grid.dim(1) * grid.dim(2);
  Tensor<T> set({positions, m});
  for (std::size_t t = 0; t < positions; ++t) {
    for (std::size_t c = 0; c < m; ++c) set[t * m + c] = grid[c * positions + t];
  }
  return set;
}

template class MeanMapLayer<float>;
template class MeanMapLayer<double>;
template Tensor<float> extract_feature_set<float>(const Tensor<float>&);
template Tensor<double> extract_feature_set<double>(const Tensor<double>&);

}  // namespace dmm
