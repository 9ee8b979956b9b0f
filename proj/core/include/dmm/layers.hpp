#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmm/rng.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Stateless forward primitives. Image tensors are [C,H,W] or batched
// [N,C,H,W]; vectors are [n] or batched [N,n]. Convolution is valid-only.
// ---------------------------------------------------------------------------

template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride);

template <Real T>
Tensor<T> relu(const Tensor<T>& input);

template <Real T>
Tensor<T> cosine(const Tensor<T>& input);

template <Real T>
Tensor<T> max_pool(const Tensor<T>& input, std::size_t window, std::size_t stride);

// Per-channel spatial mean: [C,H,W] -> [C], [N,C,H,W] -> [N,C].
template <Real T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// W x + b with W [m x n].
template <Real T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

// Inverted dropout; identity in inference mode or at rate 0.
template <Real T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode);

template <Real T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

// Mean over the batch of -log softmax(logits)[label]; grad = (softmax - onehot) / batch.
template <Real T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels);

// (1 / 2N) * sum (outputs - targets)^2; grad = (outputs - targets) / N.
template <Real T>
LossResult<T> squared_error(const Tensor<T>& outputs, const Tensor<T>& targets);

// Output spatial extent of a valid window op.
std::size_t window_output_size(std::size_t input, std::size_t window, std::size_t stride);

// Gaussian with std sqrt(2 / fan_in).
template <Real T>
Tensor<T> he_normal(Rng& rng, const Shape& shape, std::size_t fan_in);

// ---------------------------------------------------------------------------
// Stateful layers with backward. Every layer consumes batched tensors.
// ---------------------------------------------------------------------------

template <Real T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <Real T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;

  Tensor<T> forward(std::span<const Tensor<T>* const> inputs, Mode mode);
  Tensor<T> forward(const Tensor<T>& input, Mode mode);

  // Gradients w.r.t. each forward input. Parameter gradients accumulate into
  // parameters()[i].grad. Throws std::logic_error before the first forward.
  std::vector<Tensor<T>> backward(const Tensor<T>& grad_output);

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  void zero_grad();

  // Hash of the piecewise-linear activation pattern of the last forward
  // (relu masks, pooling argmaxes). Zero for smooth layers.
  virtual std::uint64_t kink_signature() const { return 0; }

  // Re-use the same random draws on every forward (gradient checks).
  virtual void freeze_randomness(bool /*frozen*/) {}

 protected:
  virtual Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) = 0;
  virtual std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) = 0;

  Parameter<T>& add_parameter(std::string name, Tensor<T> value, bool trainable = true);

  std::vector<Parameter<T>> params_;

 private:
  bool has_forward_ = false;
};

template <Real T>
class Conv2dLayer final : public Layer<T> {
 public:
  // kernels [c_out, c_in, k_h, k_w], bias [c_out].
  Conv2dLayer(Tensor<T> kernels, Tensor<T> bias, std::size_t stride);

  std::string_view kind() const override { return "conv2d"; }
  // Skip the input gradient when the input is raw data.
  void set_propagate_input_grad(bool enabled) { propagate_input_grad_ = enabled; }
  std::size_t stride() const { return stride_; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  std::size_t stride_;
  bool propagate_input_grad_ = true;
  Tensor<T> input_;
};

template <Real T>
class ReluLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "relu"; }
  std::uint64_t kink_signature() const override;

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  Tensor<T> input_;
};

template <Real T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(std::size_t window, std::size_t stride);
  std::string_view kind() const override { return "max_pool"; }
  std::uint64_t kink_signature() const override;

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  std::size_t window_;
  std::size_t stride_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;  // flat input index per output element
};

template <Real T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "global_avg_pool"; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  Shape input_shape_;
};

template <Real T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "flatten"; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  Shape input_shape_;
};

template <Real T>
class FullyConnectedLayer final : public Layer<T> {
 public:
  // weights [m, n], bias [m].
  FullyConnectedLayer(Tensor<T> weights, Tensor<T> bias);
  std::string_view kind() const override { return "fully_connected"; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  Tensor<T> input_;
};

template <Real T>
class DropoutLayer final : public Layer<T> {
 public:
  DropoutLayer(double rate, std::uint64_t seed);
  std::string_view kind() const override { return "dropout"; }
  void freeze_randomness(bool frozen) override { frozen_ = frozen; }
  double rate() const { return rate_; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  double rate_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
  bool frozen_ = false;
  Tensor<T> mask_;  // empty after an inference pass
};

// Concatenates batched vectors [N, a_i] along the feature axis.
template <Real T>
class ConcatLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "concat"; }

 protected:
  Tensor<T> do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) override;
  std::vector<Tensor<T>> do_backward(const Tensor<T>& grad_output) override;

 private:
  std::vector<std::size_t> widths_;
};

}  // namespace dmm
