#include "dmm/network.hpp"

#include <cmath>

#include "dmm/error.hpp"
#include "dmm/kernel_embeddings.hpp"
#include "dmm/mean_map_layer.hpp"

namespace dmm {

template <Real T>
struct Network<T>::Node {
  std::size_t spec_index = 0;
  std::unique_ptr<Layer<T>> layer;
  std::vector<std::ptrdiff_t> inputs;  // -1 for the data input
};

template <Real T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  validate(spec_);
  const auto shapes = slot_shapes(spec_);
  const auto node_shapes = infer_shapes(spec_);

  for (std::size_t i = 0; i + 1 < spec_.nodes.size(); ++i) {
    const NodeSpec& ns = spec_.nodes[i];
    auto node = std::make_unique<Node>();
    node->spec_index = i;
    for (const auto& in : ns.inputs) {
      node->inputs.push_back(in == kInputName ? -1 : static_cast<std::ptrdiff_t>(spec_.index_of(in)));
    }
    Rng rng(derive_seed(seed_, "init/" + ns.name));
    switch (ns.kind) {
      case NodeKind::conv2d: {
        const Shape& w = shapes.at(ns.slots[0]);
        auto layer = std::make_unique<Conv2dLayer<T>>(he_normal<T>(rng, w, w[1] * w[2] * w[3]),
                                                      Tensor<T>(shapes.at(ns.slots[1])),
                                                      std::get<Conv2dAttrs>(ns.attrs).stride);
        if (ns.inputs[0] == kInputName) layer->set_propagate_input_grad(false);
        node->layer = std::move(layer);
        break;
      }
      case NodeKind::fully_connected: {
        const Shape& w = shapes.at(ns.slots[0]);
        node->layer = std::make_unique<FullyConnectedLayer<T>>(he_normal<T>(rng, w, w[1]),
                                                               Tensor<T>(shapes.at(ns.slots[1])));
        break;
      }
      case NodeKind::mean_map: {
        const auto& a = std::get<MeanMapAttrs>(ns.attrs);
        const std::size_t m = node_shapes.at(ns.inputs[0])[0];
        const RffBasis basis =
            sample_basis(rng, a.frequencies, m, a.sigma > 0.0 ? a.sigma : 1.0, Normalization::layer);
        node->layer = std::make_unique<MeanMapLayer<T>>(basis, a.learn_frequencies, a.learn_scale);
        break;
      }
      case NodeKind::relu:
        node->layer = std::make_unique<ReluLayer<T>>();
        break;
      case NodeKind::max_pool: {
        const auto& a = std::get<MaxPoolAttrs>(ns.attrs);
        node->layer = std::make_unique<MaxPoolLayer<T>>(a.window, a.stride);
        break;
      }
      case NodeKind::global_avg_pool:
        node->layer = std::make_unique<GlobalAvgPoolLayer<T>>();
        break;
      case NodeKind::flatten:
        node->layer = std::make_unique<FlattenLayer<T>>();
        break;
      case NodeKind::dropout:
        node->layer = std::make_unique<DropoutLayer<T>>(std::get<DropoutAttrs>(ns.attrs).rate,
                                                        derive_seed(seed_, "dropout/" + ns.name));
        break;
      case NodeKind::concat:
        node->layer = std::make_unique<ConcatLayer<T>>();
        break;
      case NodeKind::softmax_xent:
      case NodeKind::squared_error:
        throw ConfigError("loss node '" + ns.name + "' must be last");
    }
    nodes_.push_back(std::move(node));
  }
  activations_.resize(nodes_.size());
}

template <Real T>
Network<T>::~Network() = default;
template <Real T>
Network<T>::Network(Network&&) noexcept = default;
template <Real T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <Real T>
ForwardResult<T> Network<T>::run(const Tensor<T>& batch, Mode mode, std::size_t stop) {
  Shape expected{batch.empty() ? 0 : batch.dim(0)};
  expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (batch.shape() != expected) {
    throw ShapeError("network '" + spec_.name + "': batch shape " + shape_string(batch.shape()) +
                     " does not match input " + shape_string(spec_.input_shape));
  }
  ready_for_backward_ = false;
  std::vector<const Tensor<T>*> ptrs;
  for (std::size_t i = 0; i < stop; ++i) {
    Node& node = *nodes_[i];
    ptrs.clear();
    for (const auto in : node.inputs) ptrs.push_back(in < 0 ? &batch : &activations_[static_cast<std::size_t>(in)]);
    try {
      activations_[i] = node.layer->forward(ptrs, mode);
    } catch (const ShapeError& e) {
      throw ShapeError("node '" + spec_.nodes[i].name + "': " + e.what());
    }
  }
  ForwardResult<T> out;
  if (stop == nodes_.size()) out.logits = activations_[spec_.index_of(spec_.logits())];
  return out;
}

template <Real T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode) {
  if (spec_.loss().kind != NodeKind::softmax_xent) {
    throw ConfigError("network '" + spec_.name + "' does not end in a classification loss");
  }
  auto out = run(batch, mode, nodes_.size());
  auto loss = softmax_xent(out.logits, labels);
  out.loss = loss.loss;
  loss_grad_ = std::move(loss.grad);
  ready_for_backward_ = true;
  return out;
}

template <Real T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& batch, const Tensor<T>& targets, Mode mode) {
  if (spec_.loss().kind != NodeKind::squared_error) {
    throw ConfigError("network '" + spec_.name + "' does not end in a regression loss");
  }
  auto out = run(batch, mode, nodes_.size());
  auto loss = squared_error(out.logits, targets);
  out.loss = loss.loss;
  loss_grad_ = std::move(loss.grad);
  ready_for_backward_ = true;
  return out;
}

template <Real T>
Tensor<T> Network<T>::predict(const Tensor<T>& batch) {
  return run(batch, Mode::infer, nodes_.size()).logits;
}

template <Real T>
Tensor<T> Network<T>::forward_to(const Tensor<T>& batch, const std::string& node, Mode mode) {
  const std::size_t idx = spec_.index_of(node);
  if (idx >= nodes_.size()) throw ConfigError("cannot stop at the loss node");
  run(batch, mode, idx + 1);
  return activations_[idx];
}

template <Real T>
void Network<T>::backward() {
  if (!ready_for_backward_) throw std::logic_error("Network::backward called without a preceding forward");
  std::vector<Tensor<T>> grads(nodes_.size());
  grads[spec_.index_of(spec_.logits())] = loss_grad_;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (grads[i].empty()) continue;
    Node& node = *nodes_[i];
    auto input_grads = node.layer->backward(grads[i]);
    grads[i] = Tensor<T>();
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (in < 0 || input_grads.at(k).empty()) continue;
      auto& target = grads[static_cast<std::size_t>(in)];
      if (target.empty()) {
        target = std::move(input_grads[k]);
      } else {
        T* dst = target.raw();
        const T* src = input_grads[k].raw();
        for (std::size_t j = 0; j < target.size(); ++j) dst[j] += src[j];
      }
    }
  }
}

template <Real T>
const Tensor<T>& Network<T>::activation(const std::string& node) const {
  const std::size_t idx = spec_.index_of(node);
  if (idx >= activations_.size() || activations_[idx].empty()) {
    throw std::logic_error("no activation recorded for node '" + node + "'");
  }
  return activations_[idx];
}

template <Real T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (auto& node : nodes_) {
    const NodeSpec& ns = spec_.nodes[node->spec_index];
    auto& params = node->layer->parameters();
    for (std::size_t k = 0; k < ns.slots.size(); ++k) out.push_back({ns.slots[k], ns.name, &params.at(k)});
  }
  return out;
}

template <Real T>
void Network<T>::zero_grad() {
  for (auto& node : nodes_) node->layer->zero_grad();
}

template <Real T>
Layer<T>& Network<T>::layer(const std::string& node) {
  const std::size_t idx = spec_.index_of(node);
  if (idx >= nodes_.size()) throw ConfigError("the loss node has no layer");
  return *nodes_[idx]->layer;
}

template <Real T>
ParamSet<T> Network<T>::export_params() const {
  ParamSet<T> out;
  for (const auto& node : nodes_) {
    const NodeSpec& ns = spec_.nodes[node->spec_index];
    const auto& params = node->layer->parameters();
    for (std::size_t k = 0; k < ns.slots.size(); ++k) out[ns.slots[k]] = params.at(k).value;
  }
  return out;
}

template <Real T>
template <Real U>
void Network<T>::import_params(const ParamSet<U>& params) {
  for (auto& ref : parameters()) {
    const auto it = params.find(ref.slot);
    if (it == params.end()) throw DataError("parameter slot '" + ref.slot + "' is missing");
    if (it->second.shape() != ref.param->value.shape()) {
      throw DataError("parameter slot '" + ref.slot + "' has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(ref.param->value.shape()));
    }
    if constexpr (std::is_same_v<T, U>) {
      ref.param->value = it->second;
    } else {
      ref.param->value = it->second.template cast<T>();
    }
  }
  ready_for_backward_ = false;
}

template <Real T>
std::uint64_t Network<T>::kink_signature() const {
  std::uint64_t h = 0x6b696e6bULL;
  for (const auto& node : nodes_) h = mix64(h ^ node->layer->kink_signature());
  return h;
}

template <Real T>
void Network<T>::freeze_randomness(bool frozen) {
  for (auto& node : nodes_) node->layer->freeze_randomness(frozen);
}

template <Real T>
std::map<std::string, double> Network<T>::calibrate_bandwidth(const Tensor<T>& warmup) {
  std::map<std::string, double> chosen;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const NodeSpec& ns = spec_.nodes[i];
    if (ns.kind != NodeKind::mean_map || std::get<MeanMapAttrs>(ns.attrs).sigma > 0.0) continue;
    run(warmup, Mode::infer, i);
    const auto in = nodes_[i]->inputs[0];
    const Tensor<T>& grid = in < 0 ? warmup : activations_[static_cast<std::size_t>(in)];
    const std::size_t n = grid.dim(0), m = grid.dim(1), hw = grid.dim(2) * grid.dim(3);
    Tensor<double> samples({n * hw, m});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < m; ++c) {
        const T* src = grid.raw() + (s * m + c) * hw;
        for (std::size_t t = 0; t < hw; ++t) samples[(s * hw + t) * m + c] = static_cast<double>(src[t]);
      }
    }
    Rng rng(derive_seed(seed_, "calibrate/" + ns.name));
    const double sigma = median_heuristic_sigma(samples, rng);
    static_cast<MeanMapLayer<T>&>(*nodes_[i]->layer).set_log_scale(-std::log(sigma));
    chosen[ns.name] = sigma;
  }
  ready_for_backward_ = false;
  return chosen;
}

template class Network<float>;
template class Network<double>;
template void Network<float>::import_params<float>(const ParamSet<float>&);
template void Network<float>::import_params<double>(const ParamSet<double>&);
template void Network<double>::import_params<float>(const ParamSet<float>&);
template void Network<double>::import_params<double>(const ParamSet<double>&);

GradReport grad_check_network(Network<double>& net, const Tensor<double>& batch, std::span<const int> labels,
                              const GradCheckOptions& options) {
  net.freeze_randomness(true);
  net.zero_grad();
  net.forward(batch, labels, options.mode);
  const std::uint64_t base_signature = net.kink_signature();
  net.backward();

  GradReport report;
  report.step = options.step;
  const double h = options.step;
  auto refs = net.parameters();
  std::size_t slot_index = 0;
  for (auto& ref : refs) {
    ++slot_index;
    if (!ref.param->trainable) continue;
    const Tensor<double> analytic = ref.param->grad;
    Tensor<double>& value = ref.param->value;
    GradEntry entry{ref.slot, 0.0, 0, 0};
    Rng pick(options.seed, slot_index);
    for (const auto i : pick_coordinates(value.size(), options.max_coords_per_tensor, pick)) {
      const double saved = value[i];
      value[i] = saved + h;
      const double f_plus = net.forward(batch, labels, options.mode).loss;
      const std::uint64_t sig_plus = net.kink_signature();
      value[i] = saved - h;
      const double f_minus = net.forward(batch, labels, options.mode).loss;
      const std::uint64_t sig_minus = net.kink_signature();
      value[i] = saved;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++entry.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[i] * (1.0 + options.corruption);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
      ++entry.checked;
    }
    report.entries.push_back(entry);
  }
  net.forward(batch, labels, options.mode);
  net.freeze_randomness(false);
  return report;
}

}  // namespace dmm
