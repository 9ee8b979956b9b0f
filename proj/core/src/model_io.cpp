#include "dmm/model_io.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dmm/error.hpp"
#include "dmm/mean_map_layer.hpp"
#include "dmm/tensor_io.hpp"

namespace dmm {

template <Real T>
void save_params(const std::filesystem::path& dir, const ParamSet<T>& params) {
  std::filesystem::create_directories(dir);
  for (const auto& [slot, value] : params) save_tensor(dir / (slot + ".dmmt"), value);
}

template <Real T>
ParamSet<T> load_params(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("parameter directory not found: " + dir.string());
  ParamSet<T> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".dmmt") continue;
    out[entry.path().stem().string()] = load_tensor<T>(entry.path());
  }
  return out;
}

template <Real T>
void save_model(const std::filesystem::path& dir, Network<T>& net) {
  std::filesystem::create_directories(dir);
  const nlohmann::json meta{{"dtype", dtype_of<T>() == DType::f32 ? "f32" : "f64"},
                            {"seed", net.seed()},
                            {"network", nlohmann::json::parse(to_json(net.spec()))}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "model.json").string());
  out << meta.dump(2) << '\n';
  save_params(dir / "params", net.export_params());
  for (const auto& node : net.spec().nodes) {
    if (node.kind != NodeKind::mean_map) continue;
    const auto& layer = static_cast<const MeanMapLayer<T>&>(net.layer(node.name));
    save_basis(dir / "basis" / node.name, layer.basis());
  }
}

template <Real T>
Network<T> load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw DataError("model description not found: " + (dir / "model.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "model.json").string() + ": " + e.what());
  }
  Network<T> net(spec_from_json(meta.at("network").dump()), meta.at("seed").get<std::uint64_t>());
  net.import_params(load_params<T>(dir / "params"));
  return net;
}

template void save_params<float>(const std::filesystem::path&, const ParamSet<float>&);
template void save_params<double>(const std::filesystem::path&, const ParamSet<double>&);
template ParamSet<float> load_params<float>(const std::filesystem::path&);
template ParamSet<double> load_params<double>(const std::filesystem::path&);
template void save_model<float>(const std::filesystem::path&, Network<float>&);
template void save_model<double>(const std::filesystem::path&, Network<double>&);
template Network<float> load_model<float>(const std::filesystem::path&);
template Network<double> load_model<double>(const std::filesystem::path&);

}  // namespace dmm
