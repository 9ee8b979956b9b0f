#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmm/dataset.hpp"
#include "dmm/rng.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

// M RGB textures [3, S, S] with values in [0, 1].
struct TextureBank {
  std::vector<Tensor<double>> textures;
  std::string source;  // "procedural" or the directory it was loaded from

  std::size_t count() const { return textures.size(); }
  std::size_t height() const { return textures.at(0).dim(1); }
  std::size_t width() const { return textures.at(0).dim(2); }
};

// Oriented sinusoid gratings blended with smoothed value noise, mapped
// through a random three-colour ramp. Texture i uses its own sub-seed.
TextureBank procedural_bank(std::uint64_t seed, std::size_t count, std::size_t size);

// Loads every *.dmmt file of the directory, sorted by filename.
TextureBank load_texture_bank(const std::filesystem::path& dir);

struct DirichletComponent {
  double weight = 0.0;
  std::vector<double> concentration;  // size M, all > 0
};

// One synthetic class: a mixture of Dirichlet distributions over texture
// blend proportions.
struct ClassSpec {
  std::vector<DirichletComponent> components;

  // Mixture mean of the Dirichlet means: sum_k w_k alpha_k / |alpha_k|_1.
  std::vector<double> expected_proportions() const;
};

// Each component has a random support of ceil(M/10) textures with
// concentration 1 and 0.01 elsewhere; mixture weights ~ Dirichlet(1,...,1).
// Classes whose expected proportions lie within L1 distance 0.1 of an
// earlier class are redrawn.
std::vector<ClassSpec> sample_class_specs(Rng& rng, std::size_t class_count, std::size_t textures,
                                          std::size_t components);

std::vector<double> sample_dirichlet(Rng& rng, const std::vector<double>& concentration);

enum class BankSource { procedural, directory };

struct SynthConfig {
  std::size_t image_size = 60;
  std::size_t patch_size = 12;
  std::size_t patches_per_image = 400;
  std::size_t classes = 4;
  std::size_t train_per_class = 10;
  std::size_t val_per_class = 10;
  std::size_t test_per_class = 100;
  std::size_t textures = 16;
  std::size_t mixture_components = 8;
  std::size_t texture_size = 64;
  std::uint64_t master_seed = 1;
  BankSource bank = BankSource::procedural;
  std::filesystem::path bank_dir;

  void validate() const;

  static SynthConfig desk();
  static SynthConfig full();
};

// Mid-grey canvas; each iteration overlays (replaces) a patch_size square
// at a uniform location with sum_j pi_j p_j, where the component is drawn
// from the class weights, pi ~ Dirichlet(alpha_k) and p_j is an independent
// uniform crop of texture j.
Tensor<double> render_image(Rng& rng, const TextureBank& bank, const ClassSpec& spec, const SynthConfig& config);

struct SynthDataset {
  SynthConfig config;
  TextureBank bank;
  std::vector<ClassSpec> classes;
  Dataset train;
  Dataset val;
  Dataset test;
};

// Deterministic under config.master_seed; images are class-major within a
// split and each is rendered from its own derived seed.
SynthDataset generate_dataset(const SynthConfig& config);

// Layout: manifest.txt ("<path> <class>" per image), dataset.json (config,
// seed, class specs), images/<split>/NNNNNN.dmmt, bank/texture_NNN.dmmt.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& dataset);

struct LoadedDataset {
  Dataset train;
  Dataset val;
  Dataset test;
  std::size_t classes = 0;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

// 4x4x4 joint colour histogram of an RGB image or crop, normalised to sum 1.
std::vector<double> color_histogram(const Tensor<double>& image);

}  // namespace dmm
