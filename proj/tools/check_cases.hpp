#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dmm/grad_check.hpp"
#include "dmm/network.hpp"

namespace dmm::tools {

// A small double-precision layer with random inputs, ready for grad_check.
struct LayerCase {
  std::string name;
  std::unique_ptr<Layer<double>> layer;
  std::vector<Tensor<double>> inputs;
};

// conv2d, relu, max_pool, global_avg_pool, flatten, fully_connected,
// dropout, meanmap, concat.
const std::vector<std::string>& layer_case_names();
LayerCase make_layer_case(const std::string& name, std::uint64_t seed);

// A network with a random input batch and labels.
struct NetCase {
  std::string name;
  NetworkSpec spec;
  Tensor<double> batch;
  std::vector<int> labels;
};

// <kind>-desk and <kind>-tiny for kind in mml, hid, lin, base, and
// replacing, replicating, forking: the three extensions of the desk base
// network with frequency learning on.
const std::vector<std::string>& net_case_names();
NetCase make_net_case(const std::string& name, std::size_t batch, std::uint64_t seed);

}  // namespace dmm::tools
