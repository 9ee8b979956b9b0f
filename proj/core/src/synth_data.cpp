#include "dmm/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "dmm/error.hpp"
#include "dmm/parallel.hpp"
#include "dmm/tensor_io.hpp"

namespace dmm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); }

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

Tensor<double> procedural_texture(Rng& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  std::vector<double> field(size * size, 0.0);

  const std::size_t gratings = 1 + rng.below(3);
  double amplitude_total = 0.0;
  for (std::size_t g = 0; g < gratings; ++g) {
    const double theta = uniform_in(rng, 0.0, std::numbers::pi);
    const double cycles = uniform_in(rng, 2.0, 10.0);
    const double phase = uniform_in(rng, 0.0, kTwoPi);
    const double amp = uniform_in(rng, 0.5, 1.0);
    amplitude_total += amp;
    const double cx = std::cos(theta) * cycles / n;
    const double cy = std::sin(theta) * cycles / n;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        field[y * size + x] += amp * std::sin(kTwoPi * (cx * static_cast<double>(x) + cy * static_cast<double>(y)) + phase);
      }
    }
  }

  // Value noise on a coarse lattice, bilinearly interpolated with smoothstep.
  const std::size_t cell = 4 + rng.below(13);
  const std::size_t lattice = size / cell + 2;
  std::vector<double> values(lattice * lattice);
  for (auto& v : values) v = uniform_in(rng, -1.0, 1.0);
  const double noise_weight = uniform_in(rng, 0.2, 1.0) * amplitude_total;
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(cell);
    const auto iy = static_cast<std::size_t>(fy);
    const double ty = smoothstep(fy - static_cast<double>(iy));
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(cell);
      const auto ix = static_cast<std::size_t>(fx);
      const double tx = smoothstep(fx - static_cast<double>(ix));
      const double v00 = values[iy * lattice + ix], v01 = values[iy * lattice + ix + 1];
      const double v10 = values[(iy + 1) * lattice + ix], v11 = values[(iy + 1) * lattice + ix + 1];
      const double top = v00 + (v01 - v00) * tx;
      const double bottom = v10 + (v11 - v10) * tx;
      field[y * size + x] += noise_weight * (top + (bottom - top) * ty);
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(field.begin(), field.end());
  const double lo = *lo_it;
  const double range = std::max(*hi_it - lo, 1e-12);

  std::array<std::array<double, 3>, 3> ramp{};
  for (auto& color : ramp) {
    for (auto& c : color) c = rng.uniform01();
  }

  Tensor<double> tex({3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < plane; ++i) {
    const double t = (field[i] - lo) / range;
    const std::size_t seg = t < 0.5 ? 0 : 1;
    const double u = std::clamp(t < 0.5 ? 2.0 * t : 2.0 * t - 1.0, 0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      tex[c * plane + i] = std::clamp(ramp[seg][c] + (ramp[seg + 1][c] - ramp[seg][c]) * u, 0.0, 1.0);
    }
  }
  return tex;
}

std::size_t sample_categorical(Rng& rng, const std::vector<DirichletComponent>& components) {
  const double u = rng.uniform01();
  double cumulative = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k) {
    cumulative += components[k].weight;
    if (u < cumulative) return k;
  }
  return components.size() - 1;
}

double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

ClassSpec sample_one_class(Rng& rng, std::size_t textures, std::size_t components) {
  const std::size_t support = (textures + 9) / 10;
  ClassSpec spec;
  const auto weights = sample_dirichlet(rng, std::vector<double>(components, 1.0));
  std::vector<std::size_t> order(textures);
  for (std::size_t k = 0; k < components; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < support; ++i) std::swap(order[i], order[i + rng.below(textures - i)]);
    DirichletComponent comp{weights[k], std::vector<double>(textures, 0.01)};
    for (std::size_t i = 0; i < support; ++i) comp.concentration[order[i]] = 1.0;
    spec.components.push_back(std::move(comp));
  }
  return spec;
}

std::string image_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".dmmt";
  return os.str();
}

Dataset render_split(const SynthConfig& config, const TextureBank& bank, const std::vector<ClassSpec>& classes,
                     std::string_view split, std::size_t per_class) {
  const std::size_t total = per_class * classes.size();
  std::vector<Tensor<float>> images(total);
  std::vector<int> labels(total);
  const std::uint64_t split_seed = derive_seed(config.master_seed, std::string("image/") + std::string(split));
  parallel_for(total, [&](std::size_t i) {
    const std::size_t c = i / per_class;
    Rng rng(split_seed, i);
    images[i] = render_image(rng, bank, classes[c], config).cast<float>();
    labels[i] = static_cast<int>(c);
  });
  Dataset out;
  out.inputs = stack(images);
  out.labels = std::move(labels);
  return out;
}

nlohmann::json config_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"patches_per_image", c.patches_per_image},
          {"classes", c.classes},
          {"train_per_class", c.train_per_class},
          {"val_per_class", c.val_per_class},
          {"test_per_class", c.test_per_class},
          {"textures", c.textures},
          {"mixture_components", c.mixture_components},
          {"texture_size", c.texture_size},
          {"master_seed", c.master_seed},
          {"bank", c.bank == BankSource::procedural ? "procedural" : "directory"},
          {"bank_dir", c.bank_dir.string()}};
}

}  // namespace

TextureBank procedural_bank(std::uint64_t seed, std::size_t count, std::size_t size) {
  if (count < 2) throw std::invalid_argument("procedural_bank: need at least 2 textures");
  if (size == 0) throw std::invalid_argument("procedural_bank: size must be positive");
  TextureBank bank;
  bank.source = "procedural";
  bank.textures.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "texture", i));
    bank.textures[i] = procedural_texture(rng, size);
  }
  return bank;
}

TextureBank load_texture_bank(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("texture directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dmmt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  TextureBank bank;
  bank.source = dir.string();
  for (const auto& f : files) {
    auto tex = load_tensor<double>(f);
    if (tex.rank() != 3 || tex.dim(0) != 3) throw DataError(f.string() + ": texture must be [3, H, W]");
    if (!bank.textures.empty() && tex.shape() != bank.textures[0].shape()) {
      throw DataError(f.string() + ": texture dimensions differ from the rest of the bank");
    }
    for (const double v : tex.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError(f.string() + ": pixel values must lie in [0, 1]");
    }
    bank.textures.push_back(std::move(tex));
  }
  if (bank.textures.size() < 2) throw DataError("texture directory " + dir.string() + " holds fewer than 2 textures");
  return bank;
}

std::vector<double> ClassSpec::expected_proportions() const {
  std::vector<double> mean;
  for (const auto& comp : components) {
    if (mean.empty()) mean.assign(comp.concentration.size(), 0.0);
    double total = 0.0;
    for (const double a : comp.concentration) total += a;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += comp.weight * comp.concentration[j] / total;
  }
  return mean;
}

std::vector<double> sample_dirichlet(Rng& rng, const std::vector<double>& concentration) {
  std::vector<double> draw(concentration.size());
  double total = 0.0;
  for (std::size_t j = 0; j < draw.size(); ++j) {
    std::gamma_distribution<double> gamma(concentration[j], 1.0);
    draw[j] = gamma(rng);
    total += draw[j];
  }
  if (total > 0.0) {
    for (auto& v : draw) v /= total;
    return draw;
  }
  // Every gamma draw underflowed: put all mass on one coordinate chosen in
  // proportion to the concentrations.
  double alpha_total = 0.0;
  for (const double a : concentration) alpha_total += a;
  double u = rng.uniform01() * alpha_total;
  std::fill(draw.begin(), draw.end(), 0.0);
  for (std::size_t j = 0; j < draw.size(); ++j) {
    u -= concentration[j];
    if (u < 0.0 || j + 1 == draw.size()) {
      draw[j] = 1.0;
      break;
    }
  }
  return draw;
}

std::vector<ClassSpec> sample_class_specs(Rng& rng, std::size_t class_count, std::size_t textures,
                                          std::size_t components) {
  if (class_count == 0 || textures == 0 || components == 0) {
    throw std::invalid_argument("sample_class_specs: counts must be >= 1");
  }
  constexpr int kMaxAttempts = 10000;
  std::vector<ClassSpec> specs;
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < class_count; ++c) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw std::runtime_error("sample_class_specs: could not draw " + std::to_string(class_count) +
                                 " separable classes");
      }
      ClassSpec spec = sample_one_class(rng, textures, components);
      auto mean = spec.expected_proportions();
      const bool separated = std::all_of(means.begin(), means.end(),
                                         [&](const auto& other) { return l1_distance(mean, other) > 0.1; });
      if (separated) {
        specs.push_back(std::move(spec));
        means.push_back(std::move(mean));
        break;
      }
    }
  }
  return specs;
}

void SynthConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || classes == 0 || textures == 0 || mixture_components == 0 ||
      texture_size == 0) {
    throw ConfigError("synthetic data sizes and counts must be >= 1");
  }
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("per-class split counts must be >= 1");
  if (patch_size > image_size) throw ConfigError("patch_size exceeds image_size");
  if (patch_size > texture_size && bank == BankSource::procedural) {
    throw ConfigError("patch_size exceeds texture_size");
  }
  if (bank == BankSource::procedural && textures < 2) throw ConfigError("need at least 2 textures");
}

SynthConfig SynthConfig::desk() { return SynthConfig{}; }

SynthConfig SynthConfig::full() {
  SynthConfig c;
  c.image_size = 120;
  c.patch_size = 12;
  c.patches_per_image = 1500;
  c.classes = 8;
  c.train_per_class = 100;
  c.val_per_class = 20;
  c.test_per_class = 500;
  c.textures = 112;
  c.mixture_components = 30;
  c.texture_size = 128;
  return c;
}

Tensor<double> render_image(Rng& rng, const TextureBank& bank, const ClassSpec& spec, const SynthConfig& config) {
  const std::size_t s = config.image_size;
  const std::size_t p = config.patch_size;
  const std::size_t th = bank.height(), tw = bank.width();
  if (p > s || p > th || p > tw) throw ShapeError("render_image: patch does not fit image or textures");
  const std::size_t m = bank.count();

  Tensor<double> image({3, s, s}, 0.5);
  std::vector<double> patch(3 * p * p);
  for (std::size_t iter = 0; iter < config.patches_per_image; ++iter) {
    const std::size_t y0 = rng.below(s - p + 1);
    const std::size_t x0 = rng.below(s - p + 1);
    const auto& comp = spec.components[sample_categorical(rng, spec.components)];
    const auto pi = sample_dirichlet(rng, comp.concentration);
    std::fill(patch.begin(), patch.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t cy = rng.below(th - p + 1);
      const std::size_t cx = rng.below(tw - p + 1);
      const auto& tex = bank.textures[j];
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          const double* src = tex.raw() + (c * th + cy + y) * tw + cx;
          double* dst = patch.data() + (c * p + y) * p;
          for (std::size_t x = 0; x < p; ++x) dst[x] += pi[j] * src[x];
        }
      }
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < p; ++y) {
        double* dst = image.raw() + (c * s + y0 + y) * s + x0;
        for (std::size_t x = 0; x < p; ++x) dst[x] = std::clamp(patch[(c * p + y) * p + x], 0.0, 1.0);
      }
    }
  }
  return image;
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  SynthDataset ds;
  ds.config = config;
  ds.bank = config.bank == BankSource::procedural
                ? procedural_bank(derive_seed(config.master_seed, "bank"), config.textures, config.texture_size)
                : load_texture_bank(config.bank_dir);
  if (config.patch_size > ds.bank.height() || config.patch_size > ds.bank.width()) {
    throw DataError("textures are smaller than the patch size");
  }
  Rng class_rng(derive_seed(config.master_seed, "classes"));
  ds.classes = sample_class_specs(class_rng, config.classes, ds.bank.count(), config.mixture_components);
  ds.train = render_split(config, ds.bank, ds.classes, "train", config.train_per_class);
  if (config.val_per_class > 0) ds.val = render_split(config, ds.bank, ds.classes, "val", config.val_per_class);
  ds.test = render_split(config, ds.bank, ds.classes, "test", config.test_per_class);
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const SynthDataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.txt").string());
  const std::pair<const char*, const Dataset*> splits[] = {
      {"train", &dataset.train}, {"val", &dataset.val}, {"test", &dataset.test}};
  for (const auto& [name, split] : splits) {
    if (split->size() == 0) continue;
    const fs::path sub = fs::path("images") / name;
    fs::create_directories(dir / sub);
    for (std::size_t i = 0; i < split->size(); ++i) {
      const fs::path rel = sub / image_name(i);
      save_tensor(dir / rel, split->inputs.slice0(i));
      manifest << rel.generic_string() << ' ' << split->labels[i] << '\n';
    }
  }
  fs::create_directories(dir / "bank");
  for (std::size_t j = 0; j < dataset.bank.count(); ++j) {
    std::ostringstream name;
    name << "texture_" << std::setw(3) << std::setfill('0') << j << ".dmmt";
    save_tensor(dir / "bank" / name.str(), dataset.bank.textures[j]);
  }
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& spec : dataset.classes) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& comp : spec.components) {
      comps.push_back({{"weight", comp.weight}, {"concentration", comp.concentration}});
    }
    classes.push_back({{"components", comps}});
  }
  nlohmann::json meta{{"config", config_json(dataset.config)},
                      {"master_seed", dataset.config.master_seed},
                      {"bank_source", dataset.bank.source},
                      {"class_specs", classes}};
  std::ofstream out(dir / "dataset.json", std::ios::trunc);
  out << meta.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw DataError("dataset manifest not found: " + (dir / "manifest.txt").string());
  std::map<std::string, std::pair<std::vector<Tensor<float>>, std::vector<int>>> splits;
  LoadedDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string path;
    int label = -1;
    if (!(is >> path >> label) || label < 0) {
      throw DataError("manifest line " + std::to_string(line_no) + " is malformed");
    }
    const auto first = path.find('/');
    const auto second = path.find('/', first + 1);
    if (first == std::string::npos || second == std::string::npos) {
      throw DataError("manifest line " + std::to_string(line_no) + " has no split directory");
    }
    auto& [images, labels] = splits[path.substr(first + 1, second - first - 1)];
    images.push_back(load_tensor<float>(dir / path));
    labels.push_back(label);
    out.classes = std::max(out.classes, static_cast<std::size_t>(label) + 1);
  }
  const auto to_dataset = [&](const std::string& name) {
    Dataset d;
    const auto it = splits.find(name);
    if (it == splits.end()) return d;
    d.inputs = stack(it->second.first);
    d.labels = it->second.second;
    return d;
  };
  out.train = to_dataset("train");
  out.val = to_dataset("val");
  out.test = to_dataset("test");
  if (out.train.size() == 0 && out.test.size() == 0) throw DataError("dataset at " + dir.string() + " is empty");
  return out;
}

std::vector<double> color_histogram(const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("color_histogram: image must be [3, H, W]");
  const std::size_t plane = image.dim(1) * image.dim(2);
  std::vector<double> hist(64, 0.0);
  const auto bin = [](double v) { return std::min<std::size_t>(3, static_cast<std::size_t>(std::max(0.0, v) * 4.0)); };
  for (std::size_t i = 0; i < plane; ++i) {
    const std::size_t b = bin(image[i]) * 16 + bin(image[plane + i]) * 4 + bin(image[2 * plane + i]);
    hist[b] += 1.0;
  }
  for (auto& h : hist) h /= static_cast<double>(plane);
  return hist;
}

}  // namespace dmm
