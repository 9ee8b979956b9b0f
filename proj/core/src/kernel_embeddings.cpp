#include "dmm/kernel_embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "dmm/error.hpp"
#include "dmm/tensor_io.hpp"

namespace dmm {

std::string_view to_string(Normalization n) {
  return n == Normalization::unbiased ? "unbiased" : "layer";
}

Normalization parse_normalization(std::string_view text) {
  if (text == "unbiased") return Normalization::unbiased;
  if (text == "layer") return Normalization::layer;
  throw ConfigError("unknown normalization '" + std::string(text) + "' (expected unbiased or layer)");
}

double RffBasis::scale() const { return std::exp(log_scale); }

double RffBasis::feature_constant() const {
  return normalization == Normalization::unbiased ? std::sqrt(2.0 / static_cast<double>(frequencies())) : 1.0;
}

Tensor<double> RffBasis::scaled_omegas() const {
  Tensor<double> out = omegas;
  const double s = scale();
  for (auto& v : out.data()) v = s * v;
  return out;
}

RffBasis sample_basis(Rng& rng, std::size_t frequencies, std::size_t input_dim, double sigma,
                      Normalization normalization) {
  if (frequencies == 0 || input_dim == 0) throw std::invalid_argument("sample_basis: D and m must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sample_basis: sigma must be positive");
  RffBasis basis;
  basis.seed = rng.seed();
  basis.omegas = gaussian<double>(rng, {frequencies, input_dim}, 0.0, 1.0);
  basis.offsets = uniform<double>(rng, {frequencies}, 0.0, 2.0 * std::numbers::pi);
  basis.log_scale = -std::log(sigma);
  basis.normalization = normalization;
  return basis;
}

double rbf_exact(std::span<const double> x, std::span<const double> y, double sigma) {
  if (x.size() != y.size()) throw ShapeError("rbf_exact: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    sq += d * d;
  }
  return std::exp(-sq / (2.0 * sigma * sigma));
}

Tensor<double> features(const RffBasis& basis, std::span<const double> x) {
  const std::size_t d_count = basis.frequencies();
  const std::size_t m = basis.input_dim();
  if (x.size() != m) {
    throw ShapeError("features: input dimension " + std::to_string(x.size()) + " != basis dimension " +
                     std::to_string(m));
  }
  const double s = basis.scale();
  const double c = basis.feature_constant();
  Tensor<double> z({d_count});
  for (std::size_t d = 0; d < d_count; ++d) {
    double proj = 0.0;
    for (std::size_t k = 0; k < m; ++k) proj += (s * basis.omegas[d * m + k]) * x[k];
    z[d] = c * std::cos(proj + basis.offsets[d]);
  }
  return z;
}

MeanMapEmbedding embed(const RffBasis& basis, const Tensor<double>& samples) {
  if (samples.rank() != 2) throw ShapeError("embed: samples must be [n, m]");
  const std::size_t n = samples.dim(0);
  const std::size_t m = samples.dim(1);
  const std::size_t d_count = basis.frequencies();
  // Neumaier-compensated sums keep the mean insensitive to row order.
  std::vector<double> sum(d_count, 0.0), comp(d_count, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto z = features(basis, std::span<const double>(samples.raw() + j * m, m));
    for (std::size_t d = 0; d < d_count; ++d) {
      const double t = sum[d] + z[d];
      comp[d] += std::abs(sum[d]) >= std::abs(z[d]) ? (sum[d] - t) + z[d] : (z[d] - t) + sum[d];
      sum[d] = t;
    }
  }
  MeanMapEmbedding e{Tensor<double>({d_count}), n};
  for (std::size_t d = 0; d < d_count; ++d) e.values[d] = (sum[d] + comp[d]) / static_cast<double>(n);
  return e;
}

double inner(const MeanMapEmbedding& embedding, const Tensor<double>& psi) {
  if (embedding.values.shape() != psi.shape()) throw ShapeError("inner: embedding and psi shapes differ");
  return dot(embedding.values, psi);
}

Tensor<double> psi_of(const RffBasis& basis, const RkhsFunction& f) {
  if (f.weights.size() != f.anchors.size()) throw ShapeError("psi_of: weights and anchors differ in count");
  Tensor<double> psi({basis.frequencies()});
  for (std::size_t l = 0; l < f.anchors.size(); ++l) {
    const auto z = features(basis, f.anchors[l]);
    for (std::size_t d = 0; d < psi.size(); ++d) psi[d] += f.weights[l] * z[d];
  }
  return psi;
}

double oracle_inner(const RffBasis& basis, const RkhsFunction& f, const Tensor<double>& samples) {
  if (f.weights.size() != f.anchors.size()) throw ShapeError("oracle_inner: weights and anchors differ in count");
  if (samples.rank() != 2) throw ShapeError("oracle_inner: samples must be [n, m]");
  const std::size_t n = samples.dim(0);
  const std::size_t m = samples.dim(1);
  std::vector<Tensor<double>> anchor_features;
  for (const auto& a : f.anchors) anchor_features.push_back(features(basis, a));
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto zx = features(basis, std::span<const double>(samples.raw() + j * m, m));
    double fx = 0.0;
    for (std::size_t l = 0; l < anchor_features.size(); ++l) {
      double k = 0.0;
      for (std::size_t d = 0; d < zx.size(); ++d) k += zx[d] * anchor_features[l][d];
      fx += f.weights[l] * k;
    }
    total += fx;
  }
  return total / static_cast<double>(n);
}

double mme_distance(const MeanMapEmbedding& a, const MeanMapEmbedding& b) {
  if (a.values.shape() != b.values.shape()) throw ShapeError("mme_distance: embedding dimensions differ");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

double median_heuristic_sigma(const Tensor<double>& samples, Rng& rng, std::size_t max_points) {
  if (samples.rank() != 2) throw ShapeError("median_heuristic_sigma: samples must be [n, m]");
  const std::size_t n = samples.dim(0);
  const std::size_t m = samples.dim(1);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (n > max_points) {
    // Partial Fisher-Yates: the first max_points entries become the subsample.
    for (std::size_t i = 0; i < max_points; ++i) std::swap(rows[i], rows[i + rng.below(n - i)]);
    rows.resize(max_points);
  }
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double d = samples[rows[i] * m + k] - samples[rows[j] * m + k];
        sq += d * d;
      }
      dist.push_back(std::sqrt(sq));
    }
  }
  if (dist.empty()) return 1.0;
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return median > 0.0 && std::isfinite(median) ? median : 1.0;
}

void save_basis(const std::filesystem::path& dir, const RffBasis& basis) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "omegas.dmmt", basis.omegas);
  save_tensor(dir / "offsets.dmmt", basis.offsets);
  save_tensor(dir / "log_scale.dmmt", Tensor<double>({1}, basis.log_scale));
  nlohmann::json meta{{"normalization", to_string(basis.normalization)},
                      {"seed", basis.seed},
                      {"frequencies", basis.frequencies()},
                      {"input_dim", basis.input_dim()}};
  std::ofstream out(dir / "basis.json");
  if (!out) throw DataError("cannot write " + (dir / "basis.json").string());
  out << meta.dump(2) << '\n';
}

RffBasis load_basis(const std::filesystem::path& dir) {
  std::ifstream in(dir / "basis.json");
  if (!in) throw DataError("missing basis bundle at " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "basis.json").string() + ": " + e.what());
  }
  RffBasis basis;
  basis.omegas = load_tensor<double>(dir / "omegas.dmmt");
  basis.offsets = load_tensor<double>(dir / "offsets.dmmt");
  basis.log_scale = load_tensor<double>(dir / "log_scale.dmmt")[0];
  basis.normalization = parse_normalization(meta.at("normalization").get<std::string>());
  basis.seed = meta.at("seed").get<std::uint64_t>();
  if (basis.omegas.rank() != 2 || basis.offsets.rank() != 1 || basis.offsets.dim(0) != basis.omegas.dim(0)) {
    throw DataError("basis bundle at " + dir.string() + " has inconsistent shapes");
  }
  return basis;
}

}  // namespace dmm
