#include "dmm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmm {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradReport::worst_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradEntry GradReport::worst_entry() const {
  GradEntry worst;
  worst.max_rel_error = -1.0;
  for (const auto& e : entries) {
    if (e.checked > 0 && e.max_rel_error > worst.max_rel_error) worst = e;
  }
  if (worst.max_rel_error < 0.0) return GradEntry{};
  return worst;
}

std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= size) return idx;
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

GradReport grad_check(Layer<double>& layer, std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  layer.freeze_randomness(true);
  std::vector<const Tensor<double>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);

  const auto objective_at = [&](std::uint64_t* signature) {
    const Tensor<double> out = layer.forward(ptrs, options.mode);
    if (signature) *signature = layer.kink_signature();
    return out;
  };

  const Tensor<double> out = objective_at(nullptr);
  Rng rng(options.seed, 1);
  const Tensor<double> projection = gaussian<double>(rng, out.shape(), 0.0, 1.0);
  const std::uint64_t base_signature = layer.kink_signature();
  layer.zero_grad();
  const std::vector<Tensor<double>> input_grads = layer.backward(projection);

  GradReport report;
  report.step = options.step;
  const double h = options.step;

  const auto check_tensor = [&](const std::string& name, Tensor<double>& target, const Tensor<double>& analytic) {
    GradEntry entry{name, 0.0, 0, 0};
    Rng pick(options.seed, 2 + report.entries.size());
    for (const auto i : pick_coordinates(target.size(), options.max_coords_per_tensor, pick)) {
      const double saved = target[i];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      target[i] = saved + h;
      const double f_plus = dot(projection, objective_at(&sig_plus));
      target[i] = saved - h;
      const double f_minus = dot(projection, objective_at(&sig_minus));
      target[i] = saved;
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
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (input_grads.at(k).empty()) continue;
    check_tensor("input" + std::to_string(k), inputs[k], input_grads[k]);
  }
  for (auto& p : layer.parameters()) {
    if (!p.trainable) continue;
    const Tensor<double> analytic = p.grad;
    check_tensor(p.name, p.value, analytic);
  }
  // Leave the layer's caches consistent with the unperturbed point.
  objective_at(nullptr);
  layer.freeze_randomness(false);
  return report;
}

}  // namespace dmm
