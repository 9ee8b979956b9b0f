#pragma once

#include <optional>

#include "dmm/kernel_embeddings.hpp"
#include "dmm/layers.hpp"

namespace dmm {

// Mean map embedding of a convolutional feature grid.
//
// For an input C of shape [N, m, h, w] the layer treats the h*w column
// vectors C[:, j, l] of each sample as a set and returns its random-feature
// mean embedding:
//
//   out[n, d] = 1/(h w) sum_{j,l} cos(exp(a) omega_d^T C[n, :, j, l] + b_d)
//
// computed as a 1x1 convolution with kernels exp(a) * omega and bias b,
// an elementwise cosine and a global average pool. The feature constant is
// 1 (Normalization::layer); the following linear layer absorbs it.
//
// Parameters: "omegas" [D, m] (trainable iff learn_frequencies), "offsets"
// [D] (never trainable), "log_scale" [1] (trainable iff learn_scale).
template <Real T>
class MeanMapLayer final : public Layer<T> {
 public:
  MeanMapLayer(const RffBasis& basis, bool learn_frequencies, bool learn_scale);

  std::string_view kind() const override { return "mean_map"; }

  std::size_t frequencies() const { return this->params_[0].value.dim(0); }
  std::size_t input_dim() const { return this->params_[0].value.dim(1); }
  bool learn_frequencies() const { return this->params_[0].trainable; }
  bool learn_scale() const { return this->params_[2].trainable; }

  double log_scale() const { return static_cast<double>(this->params_[2].value[0]); }
  void set_log_scale(double a) { this->params_[2].value[0] = static_cast<T>(a); }

  // Current parameters as a layer-normalized basis.
  RffBasis basis() const;

  struct Gradients {
    Tensor<T> input;
    std::optional<Tensor<T>> omegas;
    std::optional<double> log_scale;
  };

  // Like backward(), but returns the parameter gradients of this call
  // explicitly; absent entries correspond to disabled learn flags.
  Gradients backward_detailed(const Tensor<T>& grad_output);

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  std::uint64_t seed_;
  Tensor<T> input_;  // [N, m, h, w]
  Tensor<T> pre_;    // [N, D, h, w], pre-cosine activations
  bool has_cache_ = false;
};

// The set of m-vectors of a feature grid: [m, h, w] -> [h*w, m], row t holding
// C[:, j, l] for t = j*w + l.
template <Real T>
Tensor<T> extract_feature_set(const Tensor<T>& grid);

}  // namespace dmm
