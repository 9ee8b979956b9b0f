#include "dmm/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dmm/error.hpp"

namespace dmm {

namespace {

using VT = ValueType;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

const ConfigKey* find_key(std::string_view id) {
  for (const auto& k : config_schema()) {
    if (k.id() == id) return &k;
  }
  return nullptr;
}

bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

template <class I>
bool parse_integer(std::string_view v, I& out) {
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && ptr == v.data() + v.size() && !v.empty();
}

bool parse_real(const std::string& v, double& out) {
  if (v.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(v.c_str(), &end);
  return end == v.c_str() + v.size() && errno == 0 && std::isfinite(out);
}

// Canonical text of a value, or throws ConfigError.
std::string normalize(const ConfigKey& key, std::string_view raw) {
  const std::string v = trim(raw);
  const auto fail = [&](const char* what) -> std::string {
    throw ConfigError("config key '" + key.id() + "': '" + v + "' is not " + what);
  };
  switch (key.type) {
    case VT::integer: {
      std::int64_t x = 0;
      if (!parse_integer(v, x)) fail("an integer");
      return std::to_string(x);
    }
    case VT::unsigned_integer: {
      std::uint64_t x = 0;
      if (!parse_integer(v, x)) fail("a non-negative integer");
      return std::to_string(x);
    }
    case VT::real: {
      double x = 0.0;
      if (!parse_real(v, x)) fail("a finite number");
      return v;
    }
    case VT::boolean: {
      bool b = false;
      if (!parse_bool(v, b)) fail("a boolean");
      return b ? "true" : "false";
    }
    case VT::list: {
      std::string out;
      std::string_view rest = v;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string item = trim(rest.substr(0, comma));
        if (!item.empty()) out += (out.empty() ? "" : ",") + item;
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
      return out;
    }
    case VT::text:
      return v;
  }
  return v;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"run", "master_seed", VT::unsigned_integer, "1", "seed every random draw derives from"},
      {"run", "output_dir", VT::text, "runs", "output directory (relative to DMM_OUTPUT_ROOT when set)"},
      {"run", "threads", VT::unsigned_integer, "0", "worker threads; 0 uses every core"},

      {"data", "dir", VT::text, "", "dataset directory from gen-synth; empty renders in memory"},
      {"data", "image_size", VT::unsigned_integer, "60", "image side length"},
      {"data", "patch_size", VT::unsigned_integer, "12", "overlay patch side length"},
      {"data", "patches_per_image", VT::unsigned_integer, "400", "overlays per image"},
      {"data", "classes", VT::unsigned_integer, "4", "number of classes"},
      {"data", "train_per_class", VT::unsigned_integer, "10", "training images per class"},
      {"data", "val_per_class", VT::unsigned_integer, "10", "validation images per class"},
      {"data", "test_per_class", VT::unsigned_integer, "100", "test images per class"},
      {"data", "textures", VT::unsigned_integer, "16", "texture bank size"},
      {"data", "mixture_components", VT::unsigned_integer, "8", "Dirichlet components per class"},
      {"data", "texture_size", VT::unsigned_integer, "64", "procedural texture side length"},
      {"data", "bank", VT::text, "procedural", "procedural or directory"},
      {"data", "bank_dir", VT::text, "", "texture directory for bank = directory"},

      {"model", "kind", VT::text, "mml", "mml, hid, lin or base"},
      {"model", "filters", VT::unsigned_integer, "58", "convolution filters"},
      {"model", "kernel", VT::unsigned_integer, "12", "convolution kernel size"},
      {"model", "conv_stride", VT::unsigned_integer, "1", "convolution stride"},
      {"model", "pool_window", VT::unsigned_integer, "12", "max-pool window"},
      {"model", "pool_stride", VT::unsigned_integer, "6", "max-pool stride"},
      {"model", "frequencies", VT::unsigned_integer, "256", "random features D of mean map layers"},
      {"model", "extension_frequencies", VT::unsigned_integer, "4096", "random features D of the extension branch"},
      {"model", "hid_width", VT::unsigned_integer, "4096", "hidden layer width of the hid network"},
      {"model", "head_width", VT::unsigned_integer, "64", "hidden width of the base network head"},
      {"model", "learn_frequencies", VT::boolean, "false", "train the mean map frequencies"},
      {"model", "learn_scale", VT::boolean, "true", "train the mean map log-bandwidth"},
      {"model", "sigma", VT::real, "0", "initial bandwidth; <= 0 uses the median heuristic"},
      {"model", "mode", VT::text, "none", "none, replacing, replicating or forking"},
      {"model", "variants", VT::list, "", "any of dropout, hidden, freq"},
      {"model", "dropout_rate", VT::real, "0.5", "dropout variant rate"},
      {"model", "hidden_width", VT::unsigned_integer, "1024", "hidden variant width"},

      {"train", "learning_rate", VT::real, "0.01", "base learning rate"},
      {"train", "momentum", VT::real, "0.9", "momentum"},
      {"train", "decay_factor", VT::real, "0.1", "learning-rate step factor"},
      {"train", "decay_interval", VT::unsigned_integer, "0", "epochs per step; 0 is a third of epochs"},
      {"train", "batch_size", VT::unsigned_integer, "32", "mini-batch size"},
      {"train", "epochs", VT::unsigned_integer, "30", "training epochs"},
      {"train", "snapshot_interval", VT::unsigned_integer, "1", "epochs between snapshots"},
      {"train", "top_k", VT::unsigned_integer, "3", "k of the logged top-k accuracy"},

      {"eval", "model", VT::text, "", "model directory"},
      {"eval", "dataset", VT::text, "", "dataset directory"},
      {"eval", "split", VT::text, "test", "train, val or test"},
      {"eval", "k", VT::unsigned_integer, "3", "top-k"},

      {"gradcheck", "scope", VT::text, "layer", "layer or net"},
      {"gradcheck", "target", VT::text, "meanmap", "layer kind or network name"},
      {"gradcheck", "step", VT::real, "1e-6", "central-difference step"},
      {"gradcheck", "tolerance", VT::real, "1e-5", "maximum relative error"},
      {"gradcheck", "coords", VT::unsigned_integer, "12", "coordinates per tensor; 0 checks all"},
      {"gradcheck", "corrupt", VT::real, "0", "scale analytic gradients by 1 + corrupt"},
      {"gradcheck", "batch", VT::unsigned_integer, "2", "images per checked batch"},

      {"bench", "dims", VT::list, "1,16,64,256,1024,4096", "feature counts D"},
      {"bench", "trials", VT::unsigned_integer, "200", "random pairs per D"},
      {"bench", "sigma", VT::real, "1", "RBF bandwidth"},
      {"bench", "dim", VT::unsigned_integer, "8", "input dimension"},

      {"experiment", "kinds", VT::list, "mml,hid,lin", "networks to compare"},
      {"experiment", "small_per_class", VT::unsigned_integer, "10", "training images per class in the small subset"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.id()] = normalize(k, k.default_value);
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  const auto where = [&] { return std::string(origin) + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where() + "unterminated section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      const auto& schema = config_schema();
      if (std::none_of(schema.begin(), schema.end(), [&](const ConfigKey& k) { return k.section == section; })) {
        throw ConfigError(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where() + "key outside of any [section]");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      cfg.set(section + "." + key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str(), path.string());
}

void RunConfig::set(std::string_view id, std::string_view value) {
  const ConfigKey* key = find_key(id);
  if (!key) throw ConfigError("unknown config key '" + std::string(id) + "'");
  values_[key->id()] = normalize(*key, value);
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(std::string_view id) const {
  const auto it = values_.find(id);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(id) + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(std::string_view id) const {
  std::int64_t x = 0;
  if (!parse_integer(std::string_view(get(id)), x)) throw ConfigError("config key '" + std::string(id) + "' is not an integer");
  return x;
}

std::uint64_t RunConfig::get_uint(std::string_view id) const {
  std::uint64_t x = 0;
  if (!parse_integer(std::string_view(get(id)), x)) {
    throw ConfigError("config key '" + std::string(id) + "' is not a non-negative integer");
  }
  return x;
}

double RunConfig::get_double(std::string_view id) const {
  double x = 0.0;
  if (!parse_real(get(id), x)) throw ConfigError("config key '" + std::string(id) + "' is not a number");
  return x;
}

bool RunConfig::get_bool(std::string_view id) const {
  bool b = false;
  if (!parse_bool(get(id), b)) throw ConfigError("config key '" + std::string(id) + "' is not a boolean");
  return b;
}

std::vector<std::string> RunConfig::get_list(std::string_view id) const {
  std::vector<std::string> out;
  std::istringstream is(get(id));
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& k : config_schema()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.name << " = " << values_.at(k.id()) << '\n';
  }
  return os.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize();
}

}  // namespace dmm
