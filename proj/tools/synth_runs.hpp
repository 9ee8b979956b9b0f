#pragma once

#include <functional>
#include <map>
#include <string>

#include "dmm/network_spec.hpp"
#include "dmm/run_config.hpp"
#include "dmm/synth_data.hpp"
#include "dmm/trainer.hpp"

namespace dmm::tools {

SynthConfig synth_config(const RunConfig& cfg);
SynthNetConfig net_config(const RunConfig& cfg, std::size_t classes, std::size_t image_size);
SgdConfig sgd_config(const RunConfig& cfg);

// model.kind, extended by model.mode/model.variants when mode != none.
NetworkSpec model_spec(const RunConfig& cfg, std::size_t classes, std::size_t image_size);

struct SynthRun {
  std::string name;
  std::size_t best_epoch = 0;
  double best_val_top1 = 0.0;
  double test_top1 = 0.0;  // of the selected snapshot
  double test_topk = 0.0;
  double train_time_s = 0.0;
  std::map<std::string, double> sigma;  // calibrated mean map bandwidths
  TrainResult<float> result;
};

// Calibrates mean map bandwidths on the first training images and trains
// with SGD. `test` may be null. The network ends at its final parameters.
SynthRun run_training(Network<float>& net, const Dataset& train, const Dataset& val, const Dataset* test,
                      const SgdConfig& sgd, const std::function<void(const Snapshot<float>&)>& on_snapshot = {});

}  // namespace dmm::tools
