#include "synth_runs.hpp"

#include <algorithm>

#include "dmm/error.hpp"

namespace dmm::tools {

SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig c;
  c.image_size = cfg.get_size("data.image_size");
  c.patch_size = cfg.get_size("data.patch_size");
  c.patches_per_image = cfg.get_size("data.patches_per_image");
  c.classes = cfg.get_size("data.classes");
  c.train_per_class = cfg.get_size("data.train_per_class");
  c.val_per_class = cfg.get_size("data.val_per_class");
  c.test_per_class = cfg.get_size("data.test_per_class");
  c.textures = cfg.get_size("data.textures");
  c.mixture_components = cfg.get_size("data.mixture_components");
  c.texture_size = cfg.get_size("data.texture_size");
  c.master_seed = cfg.get_uint("run.master_seed");
  const std::string& bank = cfg.get("data.bank");
  if (bank == "procedural") {
    c.bank = BankSource::procedural;
  } else if (bank == "directory") {
    c.bank = BankSource::directory;
    c.bank_dir = cfg.get("data.bank_dir");
    if (c.bank_dir.empty()) throw ConfigError("data.bank = directory needs data.bank_dir");
  } else {
    throw ConfigError("data.bank must be procedural or directory, not '" + bank + "'");
  }
  c.validate();
  return c;
}

SynthNetConfig net_config(const RunConfig& cfg, std::size_t classes, std::size_t image_size) {
  SynthNetConfig c;
  c.classes = classes;
  c.image_size = image_size;
  c.filters = cfg.get_size("model.filters");
  c.kernel = cfg.get_size("model.kernel");
  c.conv_stride = cfg.get_size("model.conv_stride");
  c.pool_window = cfg.get_size("model.pool_window");
  c.pool_stride = cfg.get_size("model.pool_stride");
  c.frequencies = cfg.get_size("model.frequencies");
  c.hid_width = cfg.get_size("model.hid_width");
  c.head_width = cfg.get_size("model.head_width");
  c.learn_frequencies = cfg.get_bool("model.learn_frequencies");
  c.learn_scale = cfg.get_bool("model.learn_scale");
  c.sigma = cfg.get_double("model.sigma");
  return c;
}

SgdConfig sgd_config(const RunConfig& cfg) {
  SgdConfig s;
  s.learning_rate = cfg.get_double("train.learning_rate");
  s.momentum = cfg.get_double("train.momentum");
  s.decay_factor = cfg.get_double("train.decay_factor");
  s.decay_interval = cfg.get_size("train.decay_interval");
  s.batch_size = cfg.get_size("train.batch_size");
  s.max_epochs = cfg.get_size("train.epochs");
  s.snapshot_interval = cfg.get_size("train.snapshot_interval");
  s.top_k = cfg.get_size("train.top_k");
  s.seed = derive_seed(cfg.get_uint("run.master_seed"), "sgd");
  s.validate();
  return s;
}

NetworkSpec model_spec(const RunConfig& cfg, std::size_t classes, std::size_t image_size) {
  const SynthNetConfig net = net_config(cfg, classes, image_size);
  NetworkSpec spec = build_synth(parse_synth_kind(cfg.get("model.kind")), net);
  const std::string& mode = cfg.get("model.mode");
  if (mode == "none") return spec;
  VariantFlags variants;
  for (const auto& v : cfg.get_list("model.variants")) {
    const VariantFlags one = VariantFlags::parse(v);
    variants.dropout |= one.dropout;
    variants.hidden |= one.hidden;
    variants.frequency_learning |= one.frequency_learning;
  }
  variants.dropout_rate = cfg.get_double("model.dropout_rate");
  variants.hidden_width = cfg.get_size("model.hidden_width");
  return extend(spec, parse_extension_mode(mode), variants, cfg.get_size("model.extension_frequencies"), classes,
                net.sigma);
}

SynthRun run_training(Network<float>& net, const Dataset& train, const Dataset& val, const Dataset* test,
                      const SgdConfig& sgd, const std::function<void(const Snapshot<float>&)>& on_snapshot) {
  SynthRun run;
  run.name = net.spec().name;

  const std::size_t warm = std::min<std::size_t>(64, train.size());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < warm; ++i) idx.push_back(i * train.size() / warm);
  run.sigma = net.calibrate_bandwidth(train.input_batch<float>(idx));

  TrainInputs<float> inputs;
  inputs.train = &train;
  inputs.val = &val;
  inputs.test = test;
  inputs.on_snapshot = on_snapshot;
  run.result = dmm::train(net, inputs, sgd);

  const auto& best = run.result.best();
  run.best_epoch = best.epoch;
  run.best_val_top1 = best.val_top1;
  for (const auto& r : run.result.log.records) {
    if (r.epoch == best.epoch && r.split == "test") {
      run.test_top1 = r.top1;
      run.test_topk = r.topk;
    }
    run.train_time_s = std::max(run.train_time_s, r.time_s);
  }
  return run;
}

}  // namespace dmm::tools
