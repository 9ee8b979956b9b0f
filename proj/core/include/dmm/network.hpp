#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmm/grad_check.hpp"
#include "dmm/layers.hpp"
#include "dmm/network_spec.hpp"

namespace dmm {

template <Real T>
using ParamSet = std::map<std::string, Tensor<T>>;

template <Real T>
struct ParamRef {
  std::string slot;
  std::string node;
  Parameter<T>* param;
};

template <Real T>
struct ForwardResult {
  double loss = 0.0;
  Tensor<T> logits;  // output of the node feeding the loss
};

// Executes a validated NetworkSpec. Parameters are initialized from `seed`:
// He-normal weights, zero biases, and a random Fourier basis per mean map
// node, each from its own derived seed.
template <Real T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  // Softmax cross-entropy on integer labels.
  ForwardResult<T> forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode);
  // Squared error against real targets [N, k].
  ForwardResult<T> forward(const Tensor<T>& batch, const Tensor<T>& targets, Mode mode);
  // Logits only, inference mode.
  Tensor<T> predict(const Tensor<T>& batch);
  // Runs the graph up to (and including) the named node.
  Tensor<T> forward_to(const Tensor<T>& batch, const std::string& node, Mode mode);

  // Back-propagates the last forward's loss; parameter gradients accumulate.
  void backward();

  // Output of a node from the last forward.
  const Tensor<T>& activation(const std::string& node) const;

  std::vector<ParamRef<T>> parameters();
  void zero_grad();
  Layer<T>& layer(const std::string& node);

  ParamSet<T> export_params() const;
  // Every slot must be present with its declared shape; values convert to T.
  template <Real U>
  void import_params(const ParamSet<U>& params);

  std::uint64_t kink_signature() const;
  void freeze_randomness(bool frozen);

  // Sets the bandwidth of every mean map node whose sigma attribute is <= 0
  // to the median pairwise distance between the feature columns it receives
  // for the warm-up batch. Returns the chosen sigma per node.
  std::map<std::string, double> calibrate_bandwidth(const Tensor<T>& warmup);

 private:
  struct Node;
  ForwardResult<T> run(const Tensor<T>& batch, Mode mode, std::size_t stop);

  NetworkSpec spec_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Node>> nodes_;  // excludes the loss node
  std::vector<Tensor<T>> activations_;
  Tensor<T> loss_grad_;
  bool ready_for_backward_ = false;
};

extern template class Network<float>;
extern template class Network<double>;

// Central-difference check of d loss / d slot for every trainable slot, with
// the network in double precision. Coordinates that move a relu or
// max-pool kink are skipped. Entry names are slot ids.
GradReport grad_check_network(Network<double>& net, const Tensor<double>& batch, std::span<const int> labels,
                              const GradCheckOptions& options = {});

}  // namespace dmm
