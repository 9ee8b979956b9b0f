#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dmm/error.hpp"
#include "dmm/parallel.hpp"
#include "dmm/synth_data.hpp"
#include "dmm/tensor_io.hpp"
#include "oracles.hpp"

namespace dmm {
namespace {

namespace fs = std::filesystem;

SynthConfig small_config() {
  SynthConfig c = SynthConfig::desk();
  c.train_per_class = 3;
  c.val_per_class = 2;
  c.test_per_class = 4;
  c.patches_per_image = 60;
  return c;
}

Tensor<double> crop(const Tensor<double>& t, std::size_t y, std::size_t x, std::size_t s) {
  Tensor<double> out({3, s, s});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) out.at({c, i, j}) = t.at({c, y + i, x + j});
  return out;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(ProceduralBank, ShapesRangeAndDeterminism) {
  const auto bank = procedural_bank(3, 6, 32);
  ASSERT_EQ(bank.count(), 6u);
  EXPECT_EQ(bank.source, "procedural");
  for (const auto& t : bank.textures) {
    ASSERT_EQ(t.shape(), (Shape{3, 32, 32}));
    for (double v : t.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const auto again = procedural_bank(3, 6, 32);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(bank.textures[i], again.textures[i]);
  EXPECT_NE(procedural_bank(4, 6, 32).textures[0], bank.textures[0]);
}

TEST(ProceduralBank, TexturesAreDistinct) {
  // Colour-histogram distance between different textures against the
  // distance between two random crops of one texture.
  const auto bank = procedural_bank(1, 16, 64);
  Rng rng(5);
  const std::size_t s = 32;
  double within = 0.0;
  std::size_t wn = 0;
  for (const auto& t : bank.textures) {
    for (int r = 0; r < 4; ++r) {
      const auto a = crop(t, rng.below(64 - s + 1), rng.below(64 - s + 1), s);
      const auto b = crop(t, rng.below(64 - s + 1), rng.below(64 - s + 1), s);
      within += l2(color_histogram(a), color_histogram(b));
      ++wn;
    }
  }
  double between = 0.0;
  std::size_t bn = 0;
  for (std::size_t i = 0; i < bank.count(); ++i)
    for (std::size_t j = i + 1; j < bank.count(); ++j) {
      between += l2(color_histogram(bank.textures[i]), color_histogram(bank.textures[j]));
      ++bn;
    }
  within /= static_cast<double>(wn);
  between /= static_cast<double>(bn);
  EXPECT_GT(between, 10 * within) << "between " << between << " within " << within;
}

TEST(ClassSpecs, WeightsConcentrationsAndSeparation) {
  Rng rng(7);
  const auto specs = sample_class_specs(rng, 8, 112, 30);
  ASSERT_EQ(specs.size(), 8u);
  for (const auto& spec : specs) {
    ASSERT_EQ(spec.components.size(), 30u);
    double total = 0.0;
    for (const auto& comp : spec.components) {
      total += comp.weight;
      ASSERT_EQ(comp.concentration.size(), 112u);
      std::size_t support = 0;
      for (double a : comp.concentration) {
        EXPECT_GT(a, 0.0);
        if (a == 1.0) ++support;
      }
      EXPECT_EQ(support, 12u);  // ceil(112 / 10)
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  for (std::size_t i = 0; i < specs.size(); ++i)
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      const auto a = specs[i].expected_proportions(), b = specs[j].expected_proportions();
      double d = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
      EXPECT_GT(d, 0.1);
    }
}

TEST(ClassSpecs, ExpectedProportionsIsMixtureOfDirichletMeans) {
  ClassSpec spec;
  spec.components.push_back({0.25, {1.0, 1.0, 2.0}});
  spec.components.push_back({0.75, {3.0, 0.5, 0.5}});
  const auto p = spec.expected_proportions();
  EXPECT_NEAR(p[0], 0.25 * 0.25 + 0.75 * 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25 * 0.25 + 0.75 * 0.125, 1e-15);
  EXPECT_NEAR(p[2], 0.25 * 0.5 + 0.75 * 0.125, 1e-15);
}

TEST(Dirichlet, DrawsLieOnSimplex) {
  Rng rng(8);
  const std::vector<double> alpha = {0.01, 1.0, 0.01, 1.0, 0.01, 0.01};
  for (int i = 0; i < 2000; ++i) {
    const auto pi = sample_dirichlet(rng, alpha);
    double s = 0.0;
    for (double v : pi) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Dirichlet, MeanMatchesConcentrations) {
  Rng rng(9);
  const std::vector<double> alpha = {2.0, 1.0, 1.0};
  std::vector<double> mean(3, 0.0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto pi = sample_dirichlet(rng, alpha);
    for (std::size_t k = 0; k < 3; ++k) mean[k] += pi[k] / n;
  }
  // Var of the first coordinate: a(a0 - a) / (a0^2 (a0 + 1)) = 2*2/(16*5).
  const double stderr0 = std::sqrt(0.05 / n);
  EXPECT_NEAR(mean[0], 0.5, 4 * stderr0);
  EXPECT_NEAR(mean[1], 0.25, 4 * stderr0);
}

TEST(RenderImage, PixelRangeAndShape) {
  const auto cfg = small_config();
  const auto bank = procedural_bank(2, cfg.textures, cfg.texture_size);
  Rng rng(3);
  const auto specs = sample_class_specs(rng, 2, cfg.textures, cfg.mixture_components);
  const auto img = render_image(rng, bank, specs[0], cfg);
  ASSERT_EQ(img.shape(), (Shape{3, 60, 60}));
  for (double v : img.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(RenderImage, NoPatchesGivesGreyCanvas) {
  auto cfg = small_config();
  cfg.patches_per_image = 0;
  const auto bank = procedural_bank(2, cfg.textures, cfg.texture_size);
  Rng rng(4);
  const auto specs = sample_class_specs(rng, 1, cfg.textures, cfg.mixture_components);
  const auto image = render_image(rng, bank, specs[0], cfg);
  for (double v : image.data()) EXPECT_EQ(v, 0.5);
}

TEST(SynthConfig, PresetValues) {
  const auto p = SynthConfig::full();
  EXPECT_EQ(p.classes, 8u);
  EXPECT_EQ(p.train_per_class, 100u);
  EXPECT_EQ(p.test_per_class, 500u);
  EXPECT_EQ(p.image_size, 120u);
  EXPECT_EQ(p.patch_size, 12u);
  EXPECT_EQ(p.patches_per_image, 1500u);
  EXPECT_EQ(p.textures, 112u);
  EXPECT_EQ(p.mixture_components, 30u);

  const auto d = SynthConfig::desk();
  EXPECT_EQ(d.classes, 4u);
  EXPECT_EQ(d.train_per_class, 10u);
  EXPECT_EQ(d.test_per_class, 100u);
  EXPECT_EQ(d.image_size, 60u);
  EXPECT_EQ(d.patches_per_image, 400u);
  EXPECT_EQ(d.textures, 16u);
  EXPECT_EQ(d.mixture_components, 8u);

  auto bad = d;
  bad.patch_size = 61;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = d;
  bad.classes = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(GenerateDataset, LabelBalanceAndDeterminism) {
  const auto cfg = small_config();
  const auto a = generate_dataset(cfg);
  const auto check = [&](const Dataset& d, std::size_t per) {
    ASSERT_EQ(d.size(), per * cfg.classes);
    std::vector<std::size_t> counts(cfg.classes, 0);
    for (int l : d.labels) ++counts.at(static_cast<std::size_t>(l));
    for (auto c : counts) EXPECT_EQ(c, per);
    for (float v : d.inputs.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  };
  check(a.train, cfg.train_per_class);
  check(a.val, cfg.val_per_class);
  check(a.test, cfg.test_per_class);

  const auto b = generate_dataset(cfg);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.test.inputs, b.test.inputs);
  auto other = cfg;
  other.master_seed = 2;
  EXPECT_NE(generate_dataset(other).train.inputs, a.train.inputs);
}

TEST(GenerateDataset, IndependentOfThreadCount) {
  const auto cfg = small_config();
  set_thread_count(1);
  const auto a = generate_dataset(cfg);
  set_thread_count(3);
  const auto b = generate_dataset(cfg);
  set_thread_count(1);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
  EXPECT_EQ(a.test.inputs, b.test.inputs);
}

TEST(WriteDataset, ByteIdenticalAndLoadable) {
  const auto cfg = small_config();
  const auto root = oracle::scratch_dir("write_dataset");
  write_dataset(root / "a", generate_dataset(cfg));
  write_dataset(root / "b", generate_dataset(cfg));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ASSERT_TRUE(fs::exists(root / "b" / rel)) << rel;
    EXPECT_EQ(file_bytes(e.path()), file_bytes(root / "b" / rel)) << rel;
    ++files;
  }
  // images + bank + manifest + dataset.json
  EXPECT_EQ(files, cfg.classes * (3 + 2 + 4) + cfg.textures + 2);

  const auto loaded = load_dataset(root / "a");
  EXPECT_EQ(loaded.classes, cfg.classes);
  const auto original = generate_dataset(cfg);
  EXPECT_EQ(loaded.train.inputs, original.train.inputs);
  EXPECT_EQ(loaded.train.labels, original.train.labels);
  EXPECT_EQ(loaded.test.labels, original.test.labels);
}

TEST(LoadDataset, MissingDirectoryIsDataError) {
  EXPECT_THROW(load_dataset("/nonexistent/dataset"), DataError);
  EXPECT_THROW(load_texture_bank("/nonexistent/bank"), DataError);
}

TEST(ExternalBank, LoadsDirectoryAndRendersFromIt) {
  const auto dir = oracle::scratch_dir("external_bank");
  const auto bank = procedural_bank(11, 4, 24);
  for (std::size_t i = 0; i < bank.count(); ++i)
    save_tensor(dir / ("tex_" + std::to_string(i) + ".dmmt"), bank.textures[i]);
  const auto loaded = load_texture_bank(dir);
  ASSERT_EQ(loaded.count(), 4u);
  EXPECT_EQ(loaded.textures[2], bank.textures[2]);

  auto cfg = small_config();
  cfg.bank = BankSource::directory;
  cfg.bank_dir = dir;
  cfg.textures = 4;
  const auto ds = generate_dataset(cfg);
  EXPECT_EQ(ds.train.size(), cfg.classes * cfg.train_per_class);
}

TEST(GenerateDataset, ColourHistogramsCarryClassSignal) {
  // Nearest-centroid on 64-bin colour histograms must beat 1.5x chance.
  auto cfg = SynthConfig::desk();
  cfg.val_per_class = 1;
  cfg.test_per_class = 50;
  const auto ds = generate_dataset(cfg);
  const auto hist = [](const Dataset& d, std::size_t i) {
    return color_histogram(d.inputs.slice0(i).cast<double>());
  };
  std::vector<std::vector<double>> centroid(cfg.classes, std::vector<double>(64, 0.0));
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    const auto h = hist(ds.train, i);
    auto& c = centroid[static_cast<std::size_t>(ds.train.labels[i])];
    for (std::size_t k = 0; k < 64; ++k) c[k] += h[k] / static_cast<double>(cfg.train_per_class);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const auto h = hist(ds.test, i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.classes; ++c)
      if (l2(h, centroid[c]) < l2(h, centroid[best])) best = c;
    if (static_cast<int>(best) == ds.test.labels[i]) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(ds.test.size());
  EXPECT_GT(acc, 1.5 / static_cast<double>(cfg.classes)) << "accuracy " << acc;
}

TEST(ColorHistogram, SumsToOneWith64Bins) {
  Rng rng(12);
  const auto img = uniform<double>(rng, {3, 10, 10}, 0.0, 1.0);
  const auto h = color_histogram(img);
  ASSERT_EQ(h.size(), 64u);
  double s = 0.0;
  for (double v : h) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  const Tensor<double> black({3, 2, 2}, 0.0);
  EXPECT_EQ(color_histogram(black)[0], 1.0);
}

}  // namespace
}  // namespace dmm
