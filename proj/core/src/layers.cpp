#include "dmm/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dmm/error.hpp"
#include "dmm/parallel.hpp"

namespace dmm {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Adds a leading batch axis when the tensor has the per-sample rank.
template <class T>
Tensor<T> batched(const Tensor<T>& t, std::size_t sample_rank, const char* op) {
  if (t.rank() == sample_rank) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return t.reshaped(std::move(s));
  }
  if (t.rank() == sample_rank + 1) return t;
  throw ShapeError(std::string(op) + ": unexpected input rank " + std::to_string(t.rank()));
}

template <class T>
Tensor<T> unbatched(Tensor<T> t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  t.reshape(std::move(s));
  return t;
}

struct ConvGeometry {
  std::size_t batch, c_in, h, w, c_out, kh, kw, stride, oh, ow;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                           std::size_t stride) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W]");
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be [c_out,c_in,k_h,k_w]");
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.c_in = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.c_out = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.stride = stride;
  if (kernels.dim(1) != g.c_in) {
    throw ShapeError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
                     std::to_string(g.c_in));
  }
  if (bias.rank() != 1 || bias.dim(0) != g.c_out) throw ShapeError("conv2d: bias must be [c_out]");
  if (g.kh > g.h || g.kw > g.w) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " larger than input " + std::to_string(g.h) + "x" + std::to_string(g.w));
  }
  g.oh = window_output_size(g.h, g.kh, stride);
  g.ow = window_output_size(g.w, g.kw, stride);
  return g;
}

template <class T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const T* src = image + (c * g.h + oy * g.stride + i) * g.w + j;
          for (std::size_t ox = 0; ox < g.ow; ++ox) row[oy * g.ow + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          T* dst = image + (c * g.h + oy * g.stride + i) * g.w + j;
          for (std::size_t ox = 0; ox < g.ow; ++ox) dst[ox * g.stride] += row[oy * g.ow + ox];
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv2d_batched(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride) {
  const ConvGeometry g = conv_geometry(input, kernels, bias, stride);
  Tensor<T> out({g.batch, g.c_out, g.oh, g.ow});
  const std::size_t in_stride = g.c_in * g.h * g.w;
  const std::size_t out_stride = g.c_out * g.positions();
  ConstMatMap<T> k(kernels.raw(), static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.patch()));
  parallel_for(g.batch, [&](std::size_t n) {
    std::vector<T> col(g.patch() * g.positions());
    im2col(input.raw() + n * in_stride, g, col.data());
    ConstMatMap<T> cm(col.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.positions()));
    MatMap<T> om(out.raw() + n * out_stride, static_cast<Eigen::Index>(g.c_out),
                 static_cast<Eigen::Index>(g.positions()));
    om.noalias() = k * cm;
    for (std::size_t o = 0; o < g.c_out; ++o) {
      T* row = out.raw() + n * out_stride + o * g.positions();
      for (std::size_t p = 0; p < g.positions(); ++p) row[p] += bias[o];
    }
  });
  return out;
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
}

}  // namespace

std::size_t window_output_size(std::size_t input, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ShapeError("window and stride must be >= 1");
  if (window > input) {
    throw ShapeError("window " + std::to_string(window) + " exceeds input extent " + std::to_string(input));
  }
  return (input - window) / stride + 1;
}

template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride) {
  if (input.rank() == 3) return unbatched(conv2d_batched(batched(input, 3, "conv2d"), kernels, bias, stride));
  return conv2d_batched(input, kernels, bias, stride);
}

template <Real T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <Real T>
Tensor<T> cosine(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = std::cos(v);
  return out;
}

namespace {

template <class T>
Tensor<T> max_pool_batched(const Tensor<T>& x, std::size_t window, std::size_t stride,
                           std::vector<std::size_t>* argmax) {
  if (x.rank() != 4) throw ShapeError("max_pool: input must be [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = window_output_size(h, window, stride);
  const std::size_t ow = window_output_size(w, window, stride);
  Tensor<T> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        T best_value = x[best];
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            // Strict comparison: the first maximum in row-major order wins.
            if (x[idx] > best_value) {
              best_value = x[idx];
              best = idx;
            }
          }
        }
        out[o] = best_value;
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> global_avg_pool_batched(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double s = 0.0;
    const T* p = x.raw() + plane * hw;
    for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]);
    out[plane] = static_cast<T>(s / static_cast<double>(hw));
  }
  return out;
}

template <class T>
Tensor<T> fully_connected_batched(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2) throw ShapeError("fully_connected: input must be [N,n]");
  if (weights.rank() != 2) throw ShapeError("fully_connected: weights must be [m,n]");
  if (weights.dim(1) != x.dim(1)) {
    throw ShapeError("fully_connected: input width " + std::to_string(x.dim(1)) + " != weight columns " +
                     std::to_string(weights.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0)) throw ShapeError("fully_connected: bias must be [m]");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto m = static_cast<Eigen::Index>(weights.dim(0));
  Tensor<T> out({x.dim(0), weights.dim(0)});
  ConstMatMap<T> xm(x.raw(), n, in);
  ConstMatMap<T> wm(weights.raw(), m, in);
  MatMap<T> om(out.raw(), n, m);
  om.noalias() = xm * wm.transpose();
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < m; ++j) om(r, j) += bias[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace

template <Real T>
Tensor<T> max_pool(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  if (input.rank() == 3) return unbatched(max_pool_batched(batched(input, 3, "max_pool"), window, stride, nullptr));
  return max_pool_batched<T>(input, window, stride, nullptr);
}

template <Real T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() == 3) return unbatched(global_avg_pool_batched(batched(input, 3, "global_avg_pool")));
  return global_avg_pool_batched(input);
}

template <Real T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() == 1) {
    return unbatched(fully_connected_batched(batched(input, 1, "fully_connected"), weights, bias));
  }
  return fully_connected_batched(input, weights, bias);
}

template <Real T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return input;
  Tensor<T> out = input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : out.data()) v = rng.uniform01() < rate ? T{0} : v * keep_scale;
  return out;
}

template <Real T>
LossResult<T> softmax_xent(const Tensor<T>& logits_in, std::span<const int> labels) {
  const Tensor<T> logits = logits_in.rank() == 1 ? batched(logits_in, 1, "softmax_xent") : logits_in;
  if (logits.rank() != 2) throw ShapeError("softmax_xent: logits must be [batch, K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: label count does not match batch");
  LossResult<T> result{0.0, Tensor<T>(logits.shape())};
  std::vector<double> p(k);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::out_of_range("softmax_xent: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(k) + ")");
    }
    const T* row = logits.raw() + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    result.loss += -(static_cast<double>(row[label]) - mx - std::log(z));
    for (std::size_t j = 0; j < k; ++j) {
      const double g = p[j] / z - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0);
      result.grad[r * k + j] = static_cast<T>(g / static_cast<double>(n));
    }
  }
  result.loss /= static_cast<double>(n);
  if (logits_in.rank() == 1) result.grad.reshape(logits_in.shape());
  return result;
}

template <Real T>
LossResult<T> squared_error(const Tensor<T>& outputs, const Tensor<T>& targets) {
  if (outputs.shape() != targets.shape()) throw ShapeError("squared_error: shape mismatch");
  const double n = outputs.rank() >= 2 ? static_cast<double>(outputs.dim(0)) : 1.0;
  LossResult<T> result{0.0, Tensor<T>(outputs.shape())};
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double d = static_cast<double>(outputs[i]) - static_cast<double>(targets[i]);
    result.loss += 0.5 * d * d;
    result.grad[i] = static_cast<T>(d / n);
  }
  result.loss /= n;
  return result;
}

template <Real T>
Tensor<T> he_normal(Rng& rng, const Shape& shape, std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("he_normal: fan_in must be positive");
  return gaussian<T>(rng, shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

// --- Layer base --------------------------------------------------------------

template <Real T>
Tensor<T> Layer<T>::forward(std::span<const Tensor<T>* const> inputs, Mode mode) {
  Tensor<T> out = do_forward(inputs, mode);
  has_forward_ = true;
  return out;
}

template <Real T>
Tensor<T> Layer<T>::forward(const Tensor<T>& input, Mode mode) {
  const Tensor<T>* p = &input;
  return forward(std::span<const Tensor<T>* const>(&p, 1), mode);
}

template <Real T>
std::vector<Tensor<T>> Layer<T>::backward(const Tensor<T>& grad_output) {
  if (!has_forward_) throw std::logic_error(std::string(kind()) + ": backward called before forward");
  return do_backward(grad_output);
}

template <Real T>
void Layer<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <Real T>
Parameter<T>& Layer<T>::add_parameter(std::string name, Tensor<T> value, bool trainable) {
  Tensor<T> grad(value.shape());
  params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), trainable});
  return params_.back();
}

namespace {
template <class T>
const Tensor<T>& single_input(std::span<const Tensor<T>* const> inputs, std::string_view kind) {
  if (inputs.size() != 1 || inputs[0] == nullptr) {
    throw ShapeError(std::string(kind) + ": expects exactly one input");
  }
  return *inputs[0];
}
}  // namespace

// --- Conv2d ------------------------------------------------------------------

template <Real T>
Conv2dLayer<T>::Conv2dLayer(Tensor<T> kernels, Tensor<T> bias, std::size_t stride) : stride_(stride) {
  if (kernels.rank() != 4) throw ShapeError("Conv2dLayer: kernels must be rank 4");
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0)) throw ShapeError("Conv2dLayer: bias must be [c_out]");
  if (stride == 0) throw ShapeError("Conv2dLayer: stride must be >= 1");
  this->add_parameter("weight", std::move(kernels));
  this->add_parameter("bias", std::move(bias));
}

template <Real T>
Tensor<T> Conv2dLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  input_ = single_input<T>(inputs, kind());
  return conv2d_batched(input_, this->params_[0].value, this->params_[1].value, stride_);
}

template <Real T>
std::vector<Tensor<T>> Conv2dLayer<T>::do_backward(const Tensor<T>& grad_output) {
  const auto& kernels = this->params_[0].value;
  const ConvGeometry g = conv_geometry(input_, kernels, this->params_[1].value, stride_);
  if (grad_output.shape() != Shape{g.batch, g.c_out, g.oh, g.ow}) {
    throw ShapeError("conv2d backward: gradient shape mismatch");
  }
  const std::size_t in_stride = g.c_in * g.h * g.w;
  const std::size_t out_stride = g.c_out * g.positions();
  const auto rows = static_cast<Eigen::Index>(g.c_out);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto positions = static_cast<Eigen::Index>(g.positions());

  Tensor<T> grad_input = propagate_input_grad_ ? Tensor<T>(input_.shape()) : Tensor<T>();
  // Per-sample weight gradients, reduced in sample order afterwards so the
  // result is independent of the worker count.
  std::vector<RowMatrix<T>> dk(g.batch);
  ConstMatMap<T> k(kernels.raw(), rows, patch);
  parallel_for(g.batch, [&](std::size_t n) {
    std::vector<T> col(g.patch() * g.positions());
    im2col(input_.raw() + n * in_stride, g, col.data());
    ConstMatMap<T> cm(col.data(), patch, positions);
    ConstMatMap<T> gm(grad_output.raw() + n * out_stride, rows, positions);
    dk[n].noalias() = gm * cm.transpose();
    if (propagate_input_grad_) {
      MatMap<T> dcol(col.data(), patch, positions);
      dcol.noalias() = k.transpose() * gm;
      col2im(col.data(), g, grad_input.raw() + n * in_stride);
    }
  });
  MatMap<T> kgrad(this->params_[0].grad.raw(), rows, patch);
  auto& bgrad = this->params_[1].grad;
  for (std::size_t n = 0; n < g.batch; ++n) {
    kgrad += dk[n];
    for (std::size_t o = 0; o < g.c_out; ++o) {
      const T* row = grad_output.raw() + n * out_stride + o * g.positions();
      double s = 0.0;
      for (std::size_t p = 0; p < g.positions(); ++p) s += static_cast<double>(row[p]);
      bgrad[o] += static_cast<T>(s);
    }
  }
  std::vector<Tensor<T>> grads;
  grads.push_back(std::move(grad_input));
  return grads;
}

// --- ReLU --------------------------------------------------------------------

template <Real T>
Tensor<T> ReluLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  input_ = single_input<T>(inputs, kind());
  return relu(input_);
}

template <Real T>
std::vector<Tensor<T>> ReluLayer<T>::do_backward(const Tensor<T>& grad_output) {
  if (grad_output.shape() != input_.shape()) throw ShapeError("relu backward: gradient shape mismatch");
  Tensor<T> g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input_[i] > T{0})) g[i] = T{0};
  }
  return {std::move(g)};
}

template <Real T>
std::uint64_t ReluLayer<T>::kink_signature() const {
  std::uint64_t h = 0x1234;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < input_.size(); ++i) {
    word = (word << 1) | (input_[i] > T{0} ? 1u : 0u);
    if ((i & 63) == 63) {
      h = hash_combine(h, word);
      word = 0;
    }
  }
  return hash_combine(h, word);
}

// --- Max pool ----------------------------------------------------------------

template <Real T>
MaxPoolLayer<T>::MaxPoolLayer(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {
  if (window == 0 || stride == 0) throw ShapeError("MaxPoolLayer: window and stride must be >= 1");
}

template <Real T>
Tensor<T> MaxPoolLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  const auto& x = single_input<T>(inputs, kind());
  input_shape_ = x.shape();
  return max_pool_batched(x, window_, stride_, &argmax_);
}

template <Real T>
std::vector<Tensor<T>> MaxPoolLayer<T>::do_backward(const Tensor<T>& grad_output) {
  if (grad_output.size() != argmax_.size()) throw ShapeError("max_pool backward: gradient shape mismatch");
  Tensor<T> g(input_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) g[argmax_[o]] += grad_output[o];
  return {std::move(g)};
}

template <Real T>
std::uint64_t MaxPoolLayer<T>::kink_signature() const {
  std::uint64_t h = 0x5678;
  for (const auto idx : argmax_) h = hash_combine(h, idx);
  return h;
}

// --- Global average pool -----------------------------------------------------

template <Real T>
Tensor<T> GlobalAvgPoolLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  const auto& x = single_input<T>(inputs, kind());
  input_shape_ = x.shape();
  return global_avg_pool_batched(x);
}

template <Real T>
std::vector<Tensor<T>> GlobalAvgPoolLayer<T>::do_backward(const Tensor<T>& grad_output) {
  const std::size_t planes = input_shape_[0] * input_shape_[1];
  const std::size_t hw = input_shape_[2] * input_shape_[3];
  if (grad_output.size() != planes) throw ShapeError("global_avg_pool backward: gradient shape mismatch");
  Tensor<T> g(input_shape_);
  for (std::size_t plane = 0; plane < planes; ++plane) {
    const T v = static_cast<T>(static_cast<double>(grad_output[plane]) / static_cast<double>(hw));
    std::fill_n(g.raw() + plane * hw, hw, v);
  }
  return {std::move(g)};
}

// --- Flatten -----------------------------------------------------------------

template <Real T>
Tensor<T> FlattenLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  const auto& x = single_input<T>(inputs, kind());
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

template <Real T>
std::vector<Tensor<T>> FlattenLayer<T>::do_backward(const Tensor<T>& grad_output) {
  return {grad_output.reshaped(input_shape_)};
}

// --- Fully connected ---------------------------------------------------------

template <Real T>
FullyConnectedLayer<T>::FullyConnectedLayer(Tensor<T> weights, Tensor<T> bias) {
  if (weights.rank() != 2) throw ShapeError("FullyConnectedLayer: weights must be [m,n]");
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0)) throw ShapeError("FullyConnectedLayer: bias must be [m]");
  this->add_parameter("weight", std::move(weights));
  this->add_parameter("bias", std::move(bias));
}

template <Real T>
Tensor<T> FullyConnectedLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  input_ = single_input<T>(inputs, kind());
  return fully_connected_batched(input_, this->params_[0].value, this->params_[1].value);
}

template <Real T>
std::vector<Tensor<T>> FullyConnectedLayer<T>::do_backward(const Tensor<T>& grad_output) {
  const auto& w = this->params_[0].value;
  const auto n = static_cast<Eigen::Index>(input_.dim(0));
  const auto in = static_cast<Eigen::Index>(input_.dim(1));
  const auto m = static_cast<Eigen::Index>(w.dim(0));
  if (grad_output.shape() != Shape{input_.dim(0), w.dim(0)}) {
    throw ShapeError("fully_connected backward: gradient shape mismatch");
  }
  ConstMatMap<T> gm(grad_output.raw(), n, m);
  ConstMatMap<T> xm(input_.raw(), n, in);
  ConstMatMap<T> wm(w.raw(), m, in);
  MatMap<T> wg(this->params_[0].grad.raw(), m, in);
  wg.noalias() += gm.transpose() * xm;
  auto& bg = this->params_[1].grad;
  for (Eigen::Index j = 0; j < m; ++j) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) s += static_cast<double>(gm(r, j));
    bg[static_cast<std::size_t>(j)] += static_cast<T>(s);
  }
  Tensor<T> gx(input_.shape());
  MatMap<T> gxm(gx.raw(), n, in);
  gxm.noalias() = gm * wm;
  return {std::move(gx)};
}

// --- Dropout -----------------------------------------------------------------

template <Real T>
DropoutLayer<T>::DropoutLayer(double rate, std::uint64_t seed) : rate_(rate), seed_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("DropoutLayer: rate must be in [0, 1)");
}

template <Real T>
Tensor<T> DropoutLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode mode) {
  const auto& x = single_input<T>(inputs, kind());
  if (mode == Mode::infer || rate_ == 0.0) {
    mask_ = Tensor<T>();
    return x;
  }
  Rng rng(seed_, frozen_ ? calls_ : calls_++);
  mask_ = dropout(Tensor<T>(x.shape(), T{1}), rate_, rng, Mode::train);
  return mul(x, mask_);
}

template <Real T>
std::vector<Tensor<T>> DropoutLayer<T>::do_backward(const Tensor<T>& grad_output) {
  if (mask_.empty()) return {grad_output};
  return {mul(grad_output, mask_)};
}

// --- Concat ------------------------------------------------------------------

template <Real T>
Tensor<T> ConcatLayer<T>::do_forward(std::span<const Tensor<T>* const> inputs, Mode /*mode*/) {
  if (inputs.empty()) throw ShapeError("concat: needs at least one input");
  const std::size_t n = inputs[0]->dim(0);
  widths_.clear();
  std::size_t total = 0;
  for (const auto* t : inputs) {
    if (t->rank() != 2 || t->dim(0) != n) throw ShapeError("concat: inputs must be [N, a_i] with equal N");
    widths_.push_back(t->dim(1));
    total += t->dim(1);
  }
  Tensor<T> out({n, total});
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      std::copy_n(inputs[i]->raw() + r * widths_[i], widths_[i], out.raw() + r * total + offset);
      offset += widths_[i];
    }
  }
  return out;
}

template <Real T>
std::vector<Tensor<T>> ConcatLayer<T>::do_backward(const Tensor<T>& grad_output) {
  const std::size_t n = grad_output.dim(0);
  const std::size_t total = grad_output.dim(1);
  std::vector<Tensor<T>> grads;
  std::size_t offset = 0;
  for (const auto width : widths_) {
    Tensor<T> g({n, width});
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(grad_output.raw() + r * total + offset, width, g.raw() + r * width);
    }
    grads.push_back(std::move(g));
    offset += width;
  }
  return grads;
}

#define DMM_INSTANTIATE_LAYERS(T)                                                                   \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);  \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                     \
  template Tensor<T> cosine<T>(const Tensor<T>&);                                                   \
  template Tensor<T> max_pool<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                          \
  template Tensor<T> fully_connected<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&, Mode);                              \
  template LossResult<T> softmax_xent<T>(const Tensor<T>&, std::span<const int>);                   \
  template LossResult<T> squared_error<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> he_normal<T>(Rng&, const Shape&, std::size_t);                                 \
  template class Layer<T>;                                                                          \
  template class Conv2dLayer<T>;                                                                    \
  template class ReluLayer<T>;                                                                      \
  template class MaxPoolLayer<T>;                                                                   \
  template class GlobalAvgPoolLayer<T>;                                                             \
  template class FlattenLayer<T>;                                                                   \
  template class FullyConnectedLayer<T>;                                                            \
  template class DropoutLayer<T>;                                                                   \
  template class ConcatLayer<T>;

DMM_INSTANTIATE_LAYERS(float)
DMM_INSTANTIATE_LAYERS(double)

}  // namespace dmm
