#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dmm/rng.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

// Feature constant applied to every random feature.
//   unbiased: sqrt(2/D), so that E[z(x)^T z(y)] = K(x, y).
//   layer:    1, as inside the mean map layer where the constant is left to
//             the downstream linear layer.
enum class Normalization { unbiased, layer };

std::string_view to_string(Normalization n);
Normalization parse_normalization(std::string_view text);

// Random Fourier feature basis for the RBF kernel
//   K(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
// omegas are stored as standard-normal draws; the effective frequency of row
// d is exp(log_scale) * omega_d, with log_scale = -ln(sigma) at sampling time.
struct RffBasis {
  Tensor<double> omegas;   // [D, m]
  Tensor<double> offsets;  // [D], in [0, 2 pi)
  double log_scale = 0.0;
  Normalization normalization = Normalization::unbiased;
  std::uint64_t seed = 0;

  std::size_t frequencies() const { return omegas.dim(0); }
  std::size_t input_dim() const { return omegas.dim(1); }
  double scale() const;
  double feature_constant() const;
  // exp(log_scale) * omegas, elementwise.
  Tensor<double> scaled_omegas() const;
};

RffBasis sample_basis(Rng& rng, std::size_t frequencies, std::size_t input_dim, double sigma,
                      Normalization normalization = Normalization::unbiased);

double rbf_exact(std::span<const double> x, std::span<const double> y, double sigma);

// z(x)_d = c_D cos(exp(a) omega_d^T x + b_d).
Tensor<double> features(const RffBasis& basis, std::span<const double> x);

struct MeanMapEmbedding {
  Tensor<double> values;  // [D]
  std::size_t sample_count = 0;
};

// Mean of z over the rows of samples [n, m].
MeanMapEmbedding embed(const RffBasis& basis, const Tensor<double>& samples);

// mu^T psi: the RKHS inner product <f, mu> in the primal feature space.
double inner(const MeanMapEmbedding& embedding, const Tensor<double>& psi);

// Finite expansion f(x) = sum_l weights[l] K(anchors[l], x).
struct RkhsFunction {
  std::vector<double> weights;
  std::vector<std::vector<double>> anchors;
};

// psi = sum_l alpha_l z(x_l).
Tensor<double> psi_of(const RffBasis& basis, const RkhsFunction& f);

// (1/n) sum_j sum_l alpha_l <z(X_j), z(x_l)>, by explicit double loop.
// Independent route to inner(embed(basis, samples), psi_of(basis, f)).
double oracle_inner(const RffBasis& basis, const RkhsFunction& f, const Tensor<double>& samples);

double mme_distance(const MeanMapEmbedding& a, const MeanMapEmbedding& b);

// Median pairwise Euclidean distance over a subsample of at most
// max_points rows of samples [n, m]. Falls back to 1 when every pair
// coincides.
double median_heuristic_sigma(const Tensor<double>& samples, Rng& rng, std::size_t max_points = 256);

// Bundle on disk: omegas.dmmt, offsets.dmmt, log_scale.dmmt, basis.json
// (normalization, seed).
void save_basis(const std::filesystem::path& dir, const RffBasis& basis);
RffBasis load_basis(const std::filesystem::path& dir);

}  // namespace dmm
