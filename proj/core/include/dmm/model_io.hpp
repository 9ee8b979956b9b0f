#pragma once

#include <filesystem>

#include "dmm/network.hpp"

namespace dmm {

// Model directory:
//   model.json              network description, dtype and init seed
//   params/<slot>.dmmt      one tensor per parameter slot
//   basis/<node>/           random Fourier basis bundle of each mean map node
template <Real T>
void save_model(const std::filesystem::path& dir, Network<T>& net);

// Parameters are restored bit-exactly when T matches the stored dtype.
template <Real T>
Network<T> load_model(const std::filesystem::path& dir);

// Parameter sets alone (snapshots), in the params/ layout.
template <Real T>
void save_params(const std::filesystem::path& dir, const ParamSet<T>& params);
template <Real T>
ParamSet<T> load_params(const std::filesystem::path& dir);

}  // namespace dmm
