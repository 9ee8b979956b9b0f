#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dmm/error.hpp"
#include "dmm/grad_check.hpp"
#include "dmm/mean_map_layer.hpp"
#include "dmm/network.hpp"
#include "oracles.hpp"

namespace dmm {
namespace {

RffBasis layer_basis(std::uint64_t seed, std::size_t d, std::size_t m, double sigma = 1.0) {
  Rng rng(seed);
  return sample_basis(rng, d, m, sigma, Normalization::layer);
}

Tensor<double> randn(std::uint64_t seed, const Shape& shape) {
  Rng rng(seed, 3);
  return gaussian<double>(rng, shape, 0, 1);
}

TEST(MeanMapLayer, ConstantInputGivesSingleFeatureVector) {
  const auto basis = layer_basis(1, 16, 3, 0.8);
  MeanMapLayer<double> layer(basis, false, true);
  const std::vector<double> v = {0.4, -1.1, 2.0};
  Tensor<double> c({1, 3, 4, 5});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p < 20; ++p) c[k * 20 + p] = v[k];
  const auto out = layer.forward(c, Mode::infer);
  const auto z = features(basis, v);
  EXPECT_LT(oracle::max_abs_diff(out.data(), z.data()), 1e-15);
}

TEST(MeanMapLayer, OutputsInUnitInterval) {
  const auto basis = layer_basis(2, 64, 4, 0.3);
  MeanMapLayer<double> layer(basis, true, true);
  const auto out = layer.forward(randn(2, {3, 4, 6, 6}), Mode::train);
  ASSERT_EQ(out.shape(), (Shape{3, 64}));
  for (double v : out.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MeanMapLayer, EqualsSetEmbeddingOfColumns) {
  const auto basis = layer_basis(3, 16, 8, 1.7);
  MeanMapLayer<double> layer(basis, false, false);
  const auto c = randn(3, {1, 8, 5, 7});
  const auto out = layer.forward(c, Mode::infer);
  const auto set = extract_feature_set(c.slice0(0));
  ASSERT_EQ(set.shape(), (Shape{35, 8}));
  const auto want = oracle::mean_embedding(basis, set);
  EXPECT_LT(oracle::rel_error(out.data(), want), 1e-12);
  EXPECT_LT(oracle::rel_error(out.data(), embed(basis, set).values.data()), 1e-12);
}

TEST(MeanMapLayer, ComposesFromPrimitivesBitExactly) {
  auto basis = layer_basis(4, 32, 5);
  basis.log_scale = -0.3;
  MeanMapLayer<double> layer(basis, true, true);
  const auto c = randn(4, {2, 5, 4, 3});
  const auto out = layer.forward(c, Mode::infer);

  auto kernels = basis.omegas;
  for (auto& v : kernels.data()) v = std::exp(basis.log_scale) * v;
  kernels.reshape({32, 5, 1, 1});
  const auto composed = global_avg_pool(cosine(conv2d(c, kernels, basis.offsets, 1)));
  EXPECT_EQ(out, composed);
}

TEST(MeanMapLayer, OutputWidthIndependentOfSpatialSize) {
  MeanMapLayer<double> layer(layer_basis(5, 12, 2), false, true);
  for (std::size_t s : {1u, 2u, 9u}) EXPECT_EQ(layer.forward(randn(s, {2, 2, s, s + 1}), Mode::infer).shape(), (Shape{2, 12}));
}

TEST(MeanMapLayer, ZeroUpstreamGivesZeroGradients) {
  MeanMapLayer<double> layer(layer_basis(6, 8, 4), true, true);
  layer.forward(randn(6, {2, 4, 3, 3}), Mode::train);
  const auto g = layer.backward_detailed(Tensor<double>({2, 8}));
  for (double v : g.input.data()) EXPECT_EQ(v, 0.0);
  ASSERT_TRUE(g.omegas.has_value());
  for (double v : g.omegas->data()) EXPECT_EQ(v, 0.0);
  ASSERT_TRUE(g.log_scale.has_value());
  EXPECT_EQ(*g.log_scale, 0.0);
}

TEST(MeanMapLayer, GradientsPresentOnlyWhenLearned) {
  MeanMapLayer<double> layer(layer_basis(7, 8, 4), false, false);
  layer.forward(randn(7, {1, 4, 3, 3}), Mode::train);
  const auto g = layer.backward_detailed(Tensor<double>({1, 8}, 1.0));
  EXPECT_FALSE(g.omegas.has_value());
  EXPECT_FALSE(g.log_scale.has_value());
  EXPECT_THROW(MeanMapLayer<double>(layer_basis(7, 8, 4), false, false).backward(Tensor<double>({1, 8})),
               std::logic_error);
}

TEST(MeanMapLayer, InputGradientCheck) {
  MeanMapLayer<double> layer(layer_basis(8, 8, 4, 1.3), false, false);
  const auto report = grad_check(layer, {randn(8, {1, 4, 3, 3})});
  EXPECT_LT(report.worst_error(), 1e-6);
}

TEST(MeanMapLayer, FrequencyAndScaleGradientCheck) {
  MeanMapLayer<double> layer(layer_basis(9, 8, 4, 1.3), true, true);
  const auto report = grad_check(layer, {randn(9, {1, 4, 3, 3})});
  ASSERT_EQ(report.entries.size(), 3u);  // input, omegas, log_scale
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-6) << e.name;
}

TEST(MeanMapLayer, OffsetsNeverReceiveUpdates) {
  MeanMapLayer<double> layer(layer_basis(10, 8, 4), true, true);
  const auto& params = layer.parameters();
  ASSERT_EQ(params.size(), 3u);
  EXPECT_EQ(params[1].name, "offsets");
  EXPECT_FALSE(params[1].trainable);
  layer.forward(randn(10, {2, 4, 3, 3}), Mode::train);
  layer.backward(Tensor<double>({2, 8}, 1.0));
  for (double v : params[1].grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(MeanMapLayer, RejectsBadInputs) {
  Rng rng(1);
  EXPECT_THROW(MeanMapLayer<double>(sample_basis(rng, 4, 2, 1.0), false, false), std::invalid_argument);
  MeanMapLayer<double> layer(layer_basis(11, 4, 2), false, false);
  EXPECT_THROW(layer.forward(randn(1, {1, 3, 2, 2}), Mode::infer), ShapeError);
  EXPECT_THROW(layer.forward(randn(1, {1, 2, 2}), Mode::infer), ShapeError);
}

TEST(ExtractFeatureSet, LayoutAndRowCount) {
  const auto c = randn(12, {1, 3, 4});
  const auto s = extract_feature_set(c);
  ASSERT_EQ(s.shape(), (Shape{12, 1}));
  EXPECT_EQ(s.values(), c.values());

  const auto g = randn(13, {5, 2, 3});
  const auto t = extract_feature_set(g);
  ASSERT_EQ(t.dim(0), 6u);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(t.at({j * 3 + l, k}), g.at({k, j, l}));
}

TEST(MeanMapLayer, FrozenLayersLeaveNoTrainableParameters) {
  // With both learn flags off, the trainable slots of an mml network are
  // exactly those outside the mean map node.
  SynthNetConfig cfg;
  cfg.image_size = 30;
  cfg.frequencies = 16;
  cfg.learn_frequencies = false;
  cfg.learn_scale = false;
  cfg.sigma = 1.0;
  Network<double> net(build_synth(SynthKind::mml, cfg), 1);
  for (const auto& p : net.parameters()) {
    if (p.node == "mml") {
      EXPECT_FALSE(p.param->trainable) << p.slot;
    }
  }
  std::size_t trainable = 0;
  for (const auto& p : net.parameters())
    if (p.param->trainable) trainable += p.param->value.size();
  const std::size_t conv = 58 * 3 * 12 * 12 + 58;
  const std::size_t fc = 4 * 16 + 4;
  EXPECT_EQ(trainable, conv + fc);
}

}  // namespace
}  // namespace dmm
