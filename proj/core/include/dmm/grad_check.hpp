#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmm/layers.hpp"

namespace dmm {

// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8)
double relative_error(double analytic, double numeric);

// All of [0, size) when limit is 0 or >= size, otherwise `limit` distinct
// indices drawn with rng, sorted.
std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, Rng& rng);

struct GradEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/- step changed the relu/max-pool activation pattern.
  std::size_t skipped_kinks = 0;
};

struct GradReport {
  double step = 0.0;
  std::vector<GradEntry> entries;

  double worst_error() const;
  // Entry with the largest error; empty name when nothing was checked.
  GradEntry worst_entry() const;
  bool passed(double tolerance) const { return worst_error() < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 17;
  Mode mode = Mode::train;
  // Negative-control hook: analytic gradients are scaled by (1 + corruption).
  double corruption = 0.0;
};

// Compares a layer's analytic gradients (inputs and trainable parameters)
// with central differences of the objective sum_i r_i out_i, where r is a
// fixed random projection drawn from options.seed. Coordinates whose
// perturbation crosses a relu/max-pool kink are excluded and counted.
GradReport grad_check(Layer<double>& layer, std::vector<Tensor<double>> inputs, const GradCheckOptions& options = {});

}  // namespace dmm
