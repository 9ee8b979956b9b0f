#include "check_cases.hpp"

#include "dmm/error.hpp"
#include "dmm/mean_map_layer.hpp"

namespace dmm::tools {

namespace {

Tensor<double> normal(Rng& rng, const Shape& shape) { return gaussian<double>(rng, shape, 0.0, 1.0); }

SynthNetConfig desk_net() { return SynthNetConfig{}; }

SynthNetConfig tiny_net() {
  SynthNetConfig c;
  c.image_size = 30;
  c.frequencies = 32;
  c.hid_width = 64;
  return c;
}

}  // namespace

const std::vector<std::string>& layer_case_names() {
  static const std::vector<std::string> names = {"conv2d",          "relu",    "max_pool", "global_avg_pool", "flatten",
                                                 "fully_connected", "dropout", "meanmap",  "concat"};
  return names;
}

LayerCase make_layer_case(const std::string& name, std::uint64_t seed) {
  Rng rng(seed);
  LayerCase c;
  c.name = name;
  if (name == "conv2d") {
    auto layer = std::make_unique<Conv2dLayer<double>>(normal(rng, {4, 3, 3, 3}), normal(rng, {4}), 2);
    c.layer = std::move(layer);
    c.inputs.push_back(normal(rng, {2, 3, 7, 7}));
  } else if (name == "relu") {
    c.layer = std::make_unique<ReluLayer<double>>();
    c.inputs.push_back(normal(rng, {2, 3, 4, 4}));
  } else if (name == "max_pool") {
    c.layer = std::make_unique<MaxPoolLayer<double>>(3, 2);
    c.inputs.push_back(normal(rng, {2, 2, 7, 7}));
  } else if (name == "global_avg_pool") {
    c.layer = std::make_unique<GlobalAvgPoolLayer<double>>();
    c.inputs.push_back(normal(rng, {2, 3, 4, 5}));
  } else if (name == "flatten") {
    c.layer = std::make_unique<FlattenLayer<double>>();
    c.inputs.push_back(normal(rng, {2, 3, 2, 2}));
  } else if (name == "fully_connected") {
    c.layer = std::make_unique<FullyConnectedLayer<double>>(normal(rng, {4, 5}), normal(rng, {4}));
    c.inputs.push_back(normal(rng, {3, 5}));
  } else if (name == "dropout") {
    c.layer = std::make_unique<DropoutLayer<double>>(0.3, seed);
    c.inputs.push_back(normal(rng, {3, 6}));
  } else if (name == "meanmap") {
    const RffBasis basis = sample_basis(rng, 16, 4, 1.5, Normalization::layer);
    c.layer = std::make_unique<MeanMapLayer<double>>(basis, true, true);
    c.inputs.push_back(normal(rng, {2, 4, 3, 3}));
  } else if (name == "concat") {
    c.layer = std::make_unique<ConcatLayer<double>>();
    c.inputs.push_back(normal(rng, {2, 3}));
    c.inputs.push_back(normal(rng, {2, 4}));
  } else {
    std::string valid;
    for (const auto& n : layer_case_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown layer '" + name + "' (valid: " + valid + ")");
  }
  return c;
}

const std::vector<std::string>& net_case_names() {
  static const std::vector<std::string> names = {"mml-desk",  "hid-desk",  "lin-desk",  "base-desk",   "mml-tiny",
                                                 "hid-tiny",  "lin-tiny",  "base-tiny", "replacing", "replicating",
                                                 "forking"};
  return names;
}

NetCase make_net_case(const std::string& name, std::size_t batch, std::uint64_t seed) {
  if (batch == 0) throw ConfigError("gradient check batch must be >= 1");
  NetCase c;
  c.name = name;
  const auto dash = name.find('-');
  if (dash != std::string::npos) {
    const std::string scale = name.substr(dash + 1);
    if (scale != "desk" && scale != "tiny") throw ConfigError("unknown network scale in '" + name + "'");
    const SynthKind kind = parse_synth_kind(name.substr(0, dash));
    c.spec = build_synth(kind, scale == "desk" ? desk_net() : tiny_net());
  } else if (name == "replacing" || name == "replicating" || name == "forking") {
    VariantFlags v;
    v.frequency_learning = true;
    const SynthNetConfig base = desk_net();
    c.spec = extend(build_synth(SynthKind::base, base), parse_extension_mode(name), v, 4096, base.classes);
  } else {
    std::string valid;
    for (const auto& n : net_case_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown network '" + name + "' (valid: " + valid + ")");
  }
  Rng rng(seed, 1);
  Shape shape{batch};
  shape.insert(shape.end(), c.spec.input_shape.begin(), c.spec.input_shape.end());
  c.batch = uniform<double>(rng, shape, 0.0, 1.0);
  for (std::size_t i = 0; i < batch; ++i) c.labels.push_back(static_cast<int>(i % c.spec.classes));
  return c;
}

}  // namespace dmm::tools
