#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "dmm/error.hpp"
#include "dmm/rng.hpp"
#include "dmm/tensor.hpp"
#include "dmm/tensor_io.hpp"
#include "oracles.hpp"

namespace dmm {
namespace {

TEST(Tensor, ZerosHaveRequestedShape) {
  const auto a = zeros<double>({2, 3});
  EXPECT_EQ(a.shape(), (Shape{2, 3}));
  EXPECT_EQ(a.size(), 6u);
  for (double v : a.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zeros<double>({1}).values(), std::vector<double>{0.0});
  EXPECT_EQ(zeros<float>({4, 1, 1}).size(), 4u);
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor<double>(Shape{}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ElementwiseExamples) {
  const Tensor<double> a({2}, {1, 2});
  const Tensor<double> b({2}, {3, 4});
  EXPECT_EQ(add(a, b).values(), (std::vector<double>{4, 6}));

  Rng rng(3);
  const auto x = gaussian<double>(rng, {3, 4}, 0, 1);
  EXPECT_EQ(mul(x, zeros<double>({3, 4})), zeros<double>({3, 4}));
  EXPECT_EQ(sub(x, x), zeros<double>({3, 4}));
  EXPECT_THROW(add(a, zeros<double>({3})), ShapeError);
}

TEST(Tensor, MatmulExamples) {
  const Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  const Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, x), x);
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const Tensor<double> ones({2, 1}, {1, 1});
  EXPECT_EQ(matmul(a, ones).values(), (std::vector<double>{3, 7}));
  EXPECT_THROW(matmul(a, x.reshaped({3, 2})), ShapeError);
}

TEST(Tensor, MatmulMatchesTripleLoop) {
  Rng rng(11);
  const auto a = gaussian<double>(rng, {5, 7}, 0, 1);
  const auto b = gaussian<double>(rng, {7, 3}, 0, 1);
  const auto got = matmul(a, b);
  const auto want = oracle::matmul(a, b);
  EXPECT_LT(oracle::max_abs_diff(got.data(), want.data()), 1e-12);
}

TEST(Tensor, MatmulIsAssociative) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto a = gaussian<double>(rng, {4, 6}, 0, 1);
    const auto b = gaussian<double>(rng, {6, 5}, 0, 1);
    const auto c = gaussian<double>(rng, {5, 3}, 0, 1);
    const auto left = matmul(matmul(a, b), c);
    const auto right = matmul(a, matmul(b, c));
    EXPECT_LT(oracle::rel_error(left.data(), right.data()), 1e-9);
  }
}

TEST(Tensor, ReduceMeanExamples) {
  const Tensor<double> c({2, 3, 4}, 2.5);
  EXPECT_NEAR(reduce_mean(c, {0, 1, 2})[0], 2.5, 1e-12);
  const auto rows = reduce_mean(c, {1});
  for (double v : rows.data()) EXPECT_NEAR(v, 2.5, 1e-12);
  const Tensor<double> m({2, 2}, {1, 3, 5, 7});
  const auto r = reduce_mean(m, {1});
  EXPECT_EQ(r.shape(), (Shape{2}));
  EXPECT_EQ(r.values(), (std::vector<double>{2, 6}));
}

TEST(Tensor, ReduceMeanMatchesExplicitSum) {
  Rng rng(5);
  const auto a = gaussian<double>(rng, {3, 4, 5}, 0, 1);
  const auto r = reduce_mean(a, {1, 2});
  ASSERT_EQ(r.shape(), (Shape{3}));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) s += a.at({i, j, k});
    EXPECT_NEAR(r[i], s / 20.0, 1e-12);
  }
}

TEST(Tensor, ReduceMeanRejectsBadAxes) {
  const auto a = zeros<double>({2, 2});
  EXPECT_THROW(reduce_mean(a, {2}), ShapeError);
  EXPECT_THROW(reduce_mean(a, {1, 1}), ShapeError);
}

TEST(Random, GaussianMeanWithinClt) {
  Rng rng(7);
  const auto g = gaussian<double>(rng, {100000}, 0, 1);
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= 1e5;
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(1e5));
}

TEST(Random, UniformStaysInRange) {
  Rng rng(9);
  const double two_pi = 2.0 * std::numbers::pi;
  const auto u = uniform<double>(rng, {50000}, 0, two_pi);
  for (double v : u.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, two_pi);
  }
}

TEST(Random, SameSeedSameTensor) {
  Rng a(42), b(42), c(43);
  const auto x = gaussian<double>(a, {64}, 0, 1);
  EXPECT_EQ(x, gaussian<double>(b, {64}, 0, 1));
  EXPECT_NE(x, gaussian<double>(c, {64}, 0, 1));
}

TEST(Random, StreamsAreIndependentAndReproducible) {
  Rng a(1, 0), b(1, 1);
  EXPECT_NE(a(), b());
  Rng c(1, 5);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 8; ++i) first.push_back(c());
  Rng d(1, 5);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(d(), first[static_cast<std::size_t>(i)]);
  EXPECT_NE(derive_seed(1, "net"), derive_seed(1, "sgd"));
  EXPECT_NE(derive_seed(1, "image", 0), derive_seed(1, "image", 1));
  EXPECT_EQ(derive_seed(9, "bank"), derive_seed(9, "bank"));
}

TEST(TensorIo, RoundTripIsBitExact) {
  Rng rng(2);
  const auto x = gaussian<double>(rng, {3, 2, 5}, 0, 1);
  std::stringstream ss;
  write_tensor(ss, x);
  EXPECT_EQ(peek_dtype(ss), DType::f64);
  EXPECT_EQ(read_tensor<double>(ss), x);

  const auto f = x.cast<float>();
  std::stringstream sf;
  write_tensor(sf, f);
  EXPECT_EQ(read_tensor<float>(sf), f);
}

TEST(TensorIo, RejectsGarbage) {
  std::stringstream ss("not a tensor at all");
  EXPECT_THROW(read_tensor<double>(ss), DataError);
  EXPECT_THROW(load_tensor<double>("/nonexistent/x.dmmt"), DataError);
}

}  // namespace
}  // namespace dmm
