#pragma once

#include <span>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

// Inputs stacked along axis 0, with class labels (classification) or real
// targets (regression probes). Stored as 32-bit.
struct Dataset {
  Tensor<float> inputs;    // [N, ...]
  std::vector<int> labels;  // [N] or empty
  Tensor<float> targets;   // [N, k] or empty

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  Shape sample_shape() const;

  [[nodiscard]] Dataset select(std::span<const std::size_t> indices) const;

  template <Real T>
  Tensor<T> input_batch(std::span<const std::size_t> indices) const;
  template <Real T>
  Tensor<T> target_batch(std::span<const std::size_t> indices) const;
  std::vector<int> label_batch(std::span<const std::size_t> indices) const;

  // First `per_class` samples of every class, in original order.
  [[nodiscard]] Dataset take_per_class(std::size_t per_class, std::size_t classes) const;
};

// Stacks equally shaped tensors into [N, ...].
Tensor<float> stack(const std::vector<Tensor<float>>& items);

}  // namespace dmm
