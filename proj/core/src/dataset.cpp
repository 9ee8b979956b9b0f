#include "dmm/dataset.hpp"

#include <algorithm>

#include "dmm/error.hpp"

namespace dmm {

namespace {

template <class T>
Tensor<T> gather_rows(const Tensor<float>& source, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("cannot gather an empty batch");
  Shape shape = source.shape();
  const std::size_t row = source.size() / shape[0];
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= source.dim(0)) throw ShapeError("batch index out of range");
    const float* src = source.raw() + indices[r] * row;
    std::copy(src, src + row, out.raw() + r * row);
  }
  return out;
}

}  // namespace

Shape Dataset::sample_shape() const {
  if (inputs.empty()) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.inputs = gather_rows<float>(inputs, indices);
  if (!labels.empty()) out.labels = label_batch(indices);
  if (!targets.empty()) out.targets = gather_rows<float>(targets, indices);
  return out;
}

template <Real T>
Tensor<T> Dataset::input_batch(std::span<const std::size_t> indices) const {
  return gather_rows<T>(inputs, indices);
}

template <Real T>
Tensor<T> Dataset::target_batch(std::span<const std::size_t> indices) const {
  return gather_rows<T>(targets, indices);
}

std::vector<int> Dataset::label_batch(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::take_per_class(std::size_t per_class, std::size_t classes) const {
  std::vector<std::size_t> taken(classes, 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c < classes && taken[c] < per_class) {
      ++taken[c];
      keep.push_back(i);
    }
  }
  return select(keep);
}

Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  Tensor<float> out(shape);
  const std::size_t row = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items[0].shape()) throw ShapeError("stack: items differ in shape");
    std::copy(items[i].raw(), items[i].raw() + row, out.raw() + i * row);
  }
  return out;
}

template Tensor<float> Dataset::input_batch<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::input_batch<double>(std::span<const std::size_t>) const;
template Tensor<float> Dataset::target_batch<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::target_batch<double>(std::span<const std::size_t>) const;

}  // namespace dmm
