#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmm/dataset.hpp"
#include "dmm/error.hpp"
#include "dmm/network.hpp"

namespace dmm {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double decay_factor = 0.1;
  // Epochs between decays; 0 means a third of max_epochs.
  std::size_t decay_interval = 0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t snapshot_interval = 1;
  std::size_t top_k = 3;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t effective_decay_interval() const;
  double learning_rate_at(std::size_t epoch) const;
};

struct MetricRecord {
  double time_s = 0.0;  // training wall time so far, evaluation excluded
  std::size_t epoch = 0;
  std::string split;
  double top1 = 0.0;
  double topk = 0.0;
  double loss = 0.0;
};

struct MetricsLog {
  std::vector<MetricRecord> records;
  std::optional<std::size_t> best_snapshot;  // epoch of the selected snapshot

  // Header time_s,epoch,split,top1,topk,loss.
  std::string to_csv() const;
  std::string to_json() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;

  // Records of one split, in log order.
  std::vector<MetricRecord> split(std::string_view name) const;
};

struct AccuracyPoint {
  std::string split;
  double time_s = 0.0;
  double accuracy = 0.0;
};

// (seconds, top-1) per evaluation, sorted by time (stable within a split).
std::vector<AccuracyPoint> accuracy_vs_time(const MetricsLog& log);
std::string accuracy_csv(const std::vector<AccuracyPoint>& rows);

struct EvalResult {
  double top1 = 0.0;
  double topk = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
};

// Top-1/top-k of logits [N, classes]; a sample counts for top-k when fewer
// than k classes outrank its label, where class i outranks j if its score is
// larger, or equal with i < j.
EvalResult score_logits(const Tensor<double>& logits, std::span<const int> labels, std::size_t k);

template <Real T>
EvalResult evaluate(Network<T>& net, const Dataset& data, std::size_t k, std::size_t batch_size = 64);

template <Real T>
struct Snapshot {
  std::size_t epoch = 0;
  double val_top1 = 0.0;
  ParamSet<T> params;
};

template <Real T>
struct TrainResult {
  std::size_t best_index = 0;
  std::vector<Snapshot<T>> snapshots;
  MetricsLog log;

  const Snapshot<T>& best() const { return snapshots.at(best_index); }
};

// Thrown when the training loss becomes non-finite. The network is left at
// the last good snapshot, if there was one.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::optional<std::size_t> last_good_epoch)
      : NumericError(what), last_good_epoch_(last_good_epoch) {}
  std::optional<std::size_t> last_good_epoch() const { return last_good_epoch_; }

 private:
  std::optional<std::size_t> last_good_epoch_;
};

template <Real T>
struct TrainInputs {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  // Optional; evaluated alongside for accuracy-vs-time curves.
  const Dataset* test = nullptr;
  // Called after every snapshot.
  std::function<void(const Snapshot<T>&)> on_snapshot;
};

// Mini-batch SGD with momentum:  v <- mu v - lr g;  theta <- theta + v.
// Evaluates every split at epoch 0 and at each snapshot; snapshots are
// taken every snapshot_interval epochs and after the last epoch. The best
// snapshot has the highest validation top-1, earliest on ties. On return
// the network holds the final parameters.
template <Real T>
TrainResult<T> train(Network<T>& net, const TrainInputs<T>& inputs, const SgdConfig& config);

}  // namespace dmm
