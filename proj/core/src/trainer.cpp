#include "dmm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

namespace dmm {

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(decay_factor > 0.0)) throw ConfigError("decay factor must be > 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max epochs must be >= 1");
  if (snapshot_interval == 0) throw ConfigError("snapshot interval must be >= 1");
  if (top_k == 0) throw ConfigError("top_k must be >= 1");
}

std::size_t SgdConfig::effective_decay_interval() const {
  if (decay_interval > 0) return decay_interval;
  return std::max<std::size_t>(1, (max_epochs + 2) / 3);
}

double SgdConfig::learning_rate_at(std::size_t epoch) const {
  const auto steps = static_cast<double>(epoch / effective_decay_interval());
  return learning_rate * std::pow(decay_factor, steps);
}

std::string MetricsLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "time_s,epoch,split,top1,topk,loss\n";
  for (const auto& r : records) {
    os << r.time_s << ',' << r.epoch << ',' << r.split << ',' << r.top1 << ',' << r.topk << ',' << r.loss << '\n';
  }
  return os.str();
}

std::string MetricsLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back(
        {{"time_s", r.time_s}, {"epoch", r.epoch}, {"split", r.split}, {"top1", r.top1}, {"topk", r.topk}, {"loss", r.loss}});
  }
  nlohmann::json j{{"records", rows}};
  j["best_snapshot"] = best_snapshot ? nlohmann::json(*best_snapshot) : nlohmann::json(nullptr);
  return j.dump(2);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

void MetricsLog::write_csv(const std::filesystem::path& path) const { write_text(path, to_csv()); }
void MetricsLog::write_json(const std::filesystem::path& path) const { write_text(path, to_json() + "\n"); }

std::vector<MetricRecord> MetricsLog::split(std::string_view name) const {
  std::vector<MetricRecord> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(r);
  }
  return out;
}

std::vector<AccuracyPoint> accuracy_vs_time(const MetricsLog& log) {
  std::vector<AccuracyPoint> rows;
  for (const auto& r : log.records) rows.push_back({r.split, r.time_s, r.top1});
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.time_s < b.time_s; });
  return rows;
}

std::string accuracy_csv(const std::vector<AccuracyPoint>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "split,time_s,accuracy\n";
  for (const auto& r : rows) os << r.split << ',' << r.time_s << ',' << r.accuracy << '\n';
  return os.str();
}

EvalResult score_logits(const Tensor<double>& logits, std::span<const int> labels, std::size_t k) {
  if (logits.rank() != 2) throw ShapeError("score_logits: logits must be [N, classes]");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (n == 0 || labels.empty()) throw DataError("cannot evaluate an empty split");
  if (labels.size() != n) throw ShapeError("score_logits: label count differs from batch size");
  if (k == 0 || k > classes) throw ConfigError("k must lie in [1, " + std::to_string(classes) + "]");
  std::size_t hit1 = 0, hitk = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto label = static_cast<std::size_t>(labels[s]);
    if (labels[s] < 0 || label >= classes) throw std::out_of_range("score_logits: label out of range");
    const double* row = logits.raw() + s * classes;
    std::size_t rank = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++rank;
    }
    hit1 += rank == 0;
    hitk += rank < k;
  }
  EvalResult r;
  r.count = n;
  r.top1 = static_cast<double>(hit1) / static_cast<double>(n);
  r.topk = static_cast<double>(hitk) / static_cast<double>(n);
  return r;
}

template <Real T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t k, std::size_t batch_size) {
  const std::size_t n = data.size();
  if (n == 0) throw DataError("cannot evaluate an empty split");
  const bool classify = !data.labels.empty();
  std::vector<std::size_t> idx;
  Tensor<double> logits;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> batch = data.input_batch<T>(idx);
    ForwardResult<T> out;
    if (classify) {
      const auto labels = data.label_batch(idx);
      out = net.forward(batch, labels, Mode::infer);
    } else {
      out = net.forward(batch, data.target_batch<T>(idx), Mode::infer);
    }
    loss_sum += out.loss * static_cast<double>(idx.size());
    if (logits.empty()) logits = Tensor<double>({n, out.logits.dim(1)});
    const std::size_t width = out.logits.dim(1);
    for (std::size_t i = 0; i < out.logits.size(); ++i) logits[start * width + i] = out.logits[i];
  }
  EvalResult r;
  if (classify) r = score_logits(logits, data.labels, std::min(k, logits.dim(1)));
  r.count = n;
  r.loss = loss_sum / static_cast<double>(n);
  return r;
}

template <Real T>
TrainResult<T> train(Network<T>& net, const TrainInputs<T>& inputs, const SgdConfig& config) {
  config.validate();
  if (!inputs.train || inputs.train->size() == 0) throw DataError("training split is empty");
  if (!inputs.val || inputs.val->size() == 0) throw DataError("validation split is empty");
  const Dataset& data = *inputs.train;
  const bool classify = !data.labels.empty();

  TrainResult<T> result;
  double elapsed = 0.0;

  const auto evaluate_all = [&](std::size_t epoch) {
    const std::pair<const char*, const Dataset*> splits[] = {
        {"train", inputs.train}, {"val", inputs.val}, {"test", inputs.test}};
    double val_top1 = 0.0;
    for (const auto& [name, split] : splits) {
      if (!split || split->size() == 0) continue;
      const EvalResult r = evaluate(net, *split, config.top_k);
      result.log.records.push_back({elapsed, epoch, name, r.top1, r.topk, r.loss});
      if (split == inputs.val) val_top1 = r.top1;
    }
    return val_top1;
  };

  const auto take_snapshot = [&](std::size_t epoch, double val_top1) {
    result.snapshots.push_back({epoch, val_top1, net.export_params()});
    if (inputs.on_snapshot) inputs.on_snapshot(result.snapshots.back());
  };

  evaluate_all(0);

  auto refs = net.parameters();
  std::vector<Tensor<T>> velocity;
  for (const auto& ref : refs) velocity.emplace_back(ref.param->value.shape());

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::vector<std::size_t> idx;
  const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto lr = static_cast<T>(config.learning_rate_at(epoch - 1));
    const auto mu = static_cast<T>(config.momentum);

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(shuffle_seed, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + config.batch_size)));
      net.zero_grad();
      const Tensor<T> batch = data.input_batch<T>(idx);
      double loss = 0.0;
      if (classify) {
        const auto labels = data.label_batch(idx);
        loss = net.forward(batch, labels, Mode::train).loss;
      } else {
        loss = net.forward(batch, data.target_batch<T>(idx), Mode::train).loss;
      }
      if (!std::isfinite(loss)) {
        std::optional<std::size_t> last_good;
        if (!result.snapshots.empty()) {
          net.import_params(result.snapshots.back().params);
          last_good = result.snapshots.back().epoch;
        }
        throw TrainingDiverged("training loss became non-finite in epoch " + std::to_string(epoch) +
                                   (last_good ? "; restored snapshot of epoch " + std::to_string(*last_good)
                                              : std::string("; no earlier snapshot")),
                               last_good);
      }
      net.backward();
      for (std::size_t p = 0; p < refs.size(); ++p) {
        Parameter<T>& param = *refs[p].param;
        if (!param.trainable) continue;
        T* v = velocity[p].raw();
        T* theta = param.value.raw();
        const T* g = param.grad.raw();
        for (std::size_t i = 0; i < param.value.size(); ++i) {
          v[i] = mu * v[i] - lr * g[i];
          theta[i] += v[i];
        }
      }
    }
    elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (epoch % config.snapshot_interval == 0 || epoch == config.max_epochs) {
      take_snapshot(epoch, evaluate_all(epoch));
    }
  }

  for (std::size_t i = 1; i < result.snapshots.size(); ++i) {
    if (result.snapshots[i].val_top1 > result.snapshots[result.best_index].val_top1) result.best_index = i;
  }
  result.log.best_snapshot = result.best().epoch;
  return result;
}

template EvalResult evaluate<float>(Network<float>&, const Dataset&, std::size_t, std::size_t);
template EvalResult evaluate<double>(Network<double>&, const Dataset&, std::size_t, std::size_t);
template TrainResult<float> train<float>(Network<float>&, const TrainInputs<float>&, const SgdConfig&);
template TrainResult<double> train<double>(Network<double>&, const TrainInputs<double>&, const SgdConfig&);

}  // namespace dmm
