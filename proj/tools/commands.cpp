#include "commands.hpp"

#include <CLI/CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "check_cases.hpp"
#include "dmm/error.hpp"
#include "dmm/kernel_embeddings.hpp"
#include "dmm/model_io.hpp"
#include "dmm/parallel.hpp"
#include "synth_runs.hpp"

namespace dmm::tools {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path dir = output_dir(cfg);
  fs::create_directories(dir);
  cfg.save(dir / "config.cfg");
  return dir;
}

void apply_threads(const RunConfig& cfg, std::size_t cap = 0) {
  std::size_t threads = cfg.get_size("run.threads");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (cap > 0) threads = std::min(threads, cap);
  set_thread_count(threads);
}

struct LoadedData {
  Dataset train, val, test;
  std::size_t classes = 0;
  std::size_t image_size = 0;
};

LoadedData obtain_data(const RunConfig& cfg) {
  LoadedData d;
  const std::string& dir = cfg.get("data.dir");
  if (dir.empty()) {
    SynthDataset ds = generate_dataset(synth_config(cfg));
    d.train = std::move(ds.train);
    d.val = std::move(ds.val);
    d.test = std::move(ds.test);
    d.classes = ds.config.classes;
  } else {
    LoadedDataset ds = load_dataset(dir);
    d.train = std::move(ds.train);
    d.val = std::move(ds.val);
    d.test = std::move(ds.test);
    d.classes = ds.classes;
  }
  if (d.train.size() == 0) throw DataError("the dataset has no training images");
  const Shape sample = d.train.sample_shape();
  if (sample.size() != 3 || sample[1] != sample[2]) throw DataError("images must be square [3, S, S] tensors");
  d.image_size = sample[1];
  return d;
}

std::string class_counts(const Dataset& split, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const int l : split.labels) ++counts.at(static_cast<std::size_t>(l));
  std::ostringstream os;
  for (std::size_t c = 0; c < classes; ++c) os << (c ? " " : "") << c << ':' << counts[c];
  return os.str();
}

std::string epoch_dir(std::size_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
  return os.str();
}

void write_run_outputs(const fs::path& dir, const SynthRun& run) {
  fs::create_directories(dir);
  run.result.log.write_csv(dir / "metrics.csv");
  run.result.log.write_json(dir / "metrics.json");
  write_file(dir / "accuracy_vs_time.csv", accuracy_csv(accuracy_vs_time(run.result.log)));
}

}  // namespace

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.get("run.output_dir");
  if (dir.empty()) throw ConfigError("run.output_dir must not be empty");
  if (const char* root = std::getenv("DMM_OUTPUT_ROOT"); root && *root && dir.is_relative()) dir = fs::path(root) / dir;
  return dir;
}

int cmd_gen_synth(const RunConfig& cfg, std::ostream& out) {
  apply_threads(cfg);
  const SynthConfig sc = synth_config(cfg);
  const SynthDataset ds = generate_dataset(sc);
  const fs::path dir = prepare_output(cfg);
  write_dataset(dir, ds);
  out << "manifest: " << (dir / "manifest.txt").string() << '\n';
  out << "train " << class_counts(ds.train, sc.classes) << '\n';
  if (ds.val.size() > 0) out << "val " << class_counts(ds.val, sc.classes) << '\n';
  out << "test " << class_counts(ds.test, sc.classes) << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  apply_threads(cfg);
  LoadedData data = obtain_data(cfg);
  const NetworkSpec spec = model_spec(cfg, data.classes, data.image_size);
  const SgdConfig sgd = sgd_config(cfg);
  const fs::path dir = prepare_output(cfg);
  if (data.val.size() == 0) {
    out << "note: no validation split; snapshots are selected on training accuracy\n";
    data.val = data.train;
  }

  Network<float> net(spec, derive_seed(cfg.get_uint("run.master_seed"), "net"));
  out << "network " << spec.name << ": " << spec.nodes.size() << " nodes, " << parameter_count(spec)
      << " parameters\n";
  const auto save_snapshot = [&](const Snapshot<float>& s) {
    save_params(dir / "snapshots" / epoch_dir(s.epoch), s.params);
  };
  SynthRun run = run_training(net, data.train, data.val, data.test.size() ? &data.test : nullptr, sgd, save_snapshot);
  for (const auto& [node, sigma] : run.sigma) out << "bandwidth " << node << " = " << sigma << '\n';

  net.import_params(run.result.best().params);
  save_model(dir / "model", net);
  write_run_outputs(dir, run);
  for (const auto& r : run.result.log.records) {
    out << "epoch " << r.epoch << ' ' << r.split << " top1=" << r.top1 << " top" << sgd.top_k << '=' << r.topk
        << " loss=" << r.loss << '\n';
  }
  out << "best snapshot: epoch " << run.best_epoch << " (val top1 " << run.best_val_top1 << ")\n";
  out << "metrics: " << (dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  apply_threads(cfg);
  const std::string& model_dir = cfg.get("eval.model");
  const std::string& data_dir = cfg.get("eval.dataset");
  if (model_dir.empty()) throw ConfigError("eval.model (--model) is required");
  if (data_dir.empty()) throw ConfigError("eval.dataset (--dataset) is required");
  Network<float> net = load_model<float>(model_dir);
  const LoadedDataset ds = load_dataset(data_dir);
  const std::string& split = cfg.get("eval.split");
  const Dataset* data = split == "train" ? &ds.train : split == "val" ? &ds.val : split == "test" ? &ds.test : nullptr;
  if (!data) throw ConfigError("eval.split must be train, val or test");
  const std::size_t k = cfg.get_size("eval.k");
  if (k == 0 || k > net.spec().classes) {
    throw ConfigError("eval.k must lie in [1, " + std::to_string(net.spec().classes) + "]");
  }
  const EvalResult r = evaluate(net, *data, k);
  const nlohmann::json j{{"split", split}, {"count", r.count}, {"top1", r.top1}, {"k", k}, {"topk", r.topk},
                         {"loss", r.loss}};
  const fs::path dir = prepare_output(cfg);
  write_file(dir / "eval.json", j.dump(2) + "\n");
  out << "top1 = " << r.top1 << "\ntop" << k << " = " << r.topk << '\n' << j.dump() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  apply_threads(cfg, 1);
  const std::string& scope = cfg.get("gradcheck.scope");
  const std::string& target = cfg.get("gradcheck.target");
  const double tolerance = cfg.get_double("gradcheck.tolerance");
  const std::uint64_t seed = derive_seed(cfg.get_uint("run.master_seed"), "gradcheck");
  GradCheckOptions options;
  options.step = cfg.get_double("gradcheck.step");
  options.corruption = cfg.get_double("gradcheck.corrupt");
  options.seed = seed;

  std::vector<std::pair<std::string, GradReport>> reports;
  if (scope == "layer") {
    const std::vector<std::string> names = target == "all" ? layer_case_names() : std::vector<std::string>{target};
    for (const auto& name : names) {
      LayerCase c = make_layer_case(name, seed);
      reports.emplace_back(name, grad_check(*c.layer, c.inputs, options));
    }
  } else if (scope == "net") {
    options.max_coords_per_tensor = cfg.get_size("gradcheck.coords");
    const std::vector<std::string> names = target == "all" ? net_case_names() : std::vector<std::string>{target};
    for (const auto& name : names) {
      NetCase c = make_net_case(name, cfg.get_size("gradcheck.batch"), seed);
      Network<double> net(c.spec, derive_seed(cfg.get_uint("run.master_seed"), "net"));
      net.calibrate_bandwidth(c.batch);
      reports.emplace_back(name, grad_check_network(net, c.batch, c.labels, options));
    }
  } else {
    throw ConfigError("gradcheck scope must be layer or net, not '" + scope + "'");
  }

  const fs::path dir = prepare_output(cfg);
  std::ostringstream csv;
  csv << "target,tensor,max_rel_error,checked,skipped_kinks\n";
  bool passed = true;
  for (const auto& [name, report] : reports) {
    for (const auto& e : report.entries) {
      csv << name << ',' << e.name << ',' << e.max_rel_error << ',' << e.checked << ',' << e.skipped_kinks << '\n';
      out << name << ' ' << e.name << " max_rel_error=" << e.max_rel_error << " checked=" << e.checked
          << " skipped=" << e.skipped_kinks << '\n';
    }
    const GradEntry worst = report.worst_entry();
    const bool ok = report.passed(tolerance);
    passed = passed && ok;
    out << (ok ? "PASS " : "FAIL ") << name << ": worst " << worst.max_rel_error << " at " << worst.name
        << " (tolerance " << tolerance << ")\n";
  }
  write_file(dir / "gradcheck.csv", csv.str());
  return passed ? kExitOk : kExitGradcheck;
}

std::vector<KernelErrorRow> kernel_error_table(const std::vector<std::size_t>& dims, std::size_t trials, double sigma,
                                               std::size_t dim, std::uint64_t seed) {
  if (trials == 0 || dim == 0) throw ConfigError("kernel bench needs trials >= 1 and dim >= 1");
  if (!(sigma > 0.0)) throw ConfigError("kernel bench sigma must be > 0");
  // Pairs at typical distance sqrt(2) sigma, shared across every D.
  Rng pair_rng(derive_seed(seed, "bench/pairs"));
  const Tensor<double> xs = gaussian<double>(pair_rng, {trials, dim}, 0.0, sigma / std::sqrt(double(dim)));
  const Tensor<double> ys = gaussian<double>(pair_rng, {trials, dim}, 0.0, sigma / std::sqrt(double(dim)));
  std::vector<KernelErrorRow> rows;
  for (const std::size_t d : dims) {
    if (d == 0) throw ConfigError("kernel bench dims must be >= 1");
    std::vector<double> errs(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, "bench/basis", d), t);
      const RffBasis basis = sample_basis(rng, d, dim, sigma, Normalization::unbiased);
      const std::span<const double> x(xs.raw() + t * dim, dim), y(ys.raw() + t * dim, dim);
      errs[t] = std::abs(dot(features(basis, x), features(basis, y)) - rbf_exact(x, y, sigma));
    }
    std::sort(errs.begin(), errs.end());
    const std::size_t mid = trials / 2;
    const double median = trials % 2 ? errs[mid] : 0.5 * (errs[mid - 1] + errs[mid]);
    rows.push_back({d, median, errs.back()});
  }
  return rows;
}

int cmd_kernel_bench(const RunConfig& cfg, std::ostream& out) {
  std::vector<std::size_t> dims;
  for (const auto& s : cfg.get_list("bench.dims")) {
    std::size_t d = 0;
    std::istringstream is(s);
    if (!(is >> d) || !is.eof()) throw ConfigError("bench.dims entry '" + s + "' is not a positive integer");
    dims.push_back(d);
  }
  const auto rows = kernel_error_table(dims, cfg.get_size("bench.trials"), cfg.get_double("bench.sigma"),
                                       cfg.get_size("bench.dim"), cfg.get_uint("run.master_seed"));
  std::ostringstream csv;
  csv.precision(10);
  csv << "D,median_err,max_err\n";
  for (const auto& r : rows) csv << r.frequencies << ',' << r.median_err << ',' << r.max_err << '\n';
  const fs::path dir = prepare_output(cfg);
  write_file(dir / "kernel_bench.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int cmd_experiment_synth(const RunConfig& cfg, std::ostream& out) {
  apply_threads(cfg);
  const SynthConfig sc = synth_config(cfg);
  const SynthDataset ds = generate_dataset(sc);
  const std::size_t small_per_class = std::min(cfg.get_size("experiment.small_per_class"), sc.train_per_class);
  if (small_per_class == 0) throw ConfigError("experiment.small_per_class must be >= 1");
  const Dataset small = ds.train.take_per_class(small_per_class, sc.classes);
  const SgdConfig sgd = sgd_config(cfg);
  const fs::path dir = prepare_output(cfg);
  const std::uint64_t master = cfg.get_uint("run.master_seed");

  std::ostringstream summary, curves;
  summary << "kind,subset,train_per_class,best_epoch,val_top1,test_top1,test_topk,train_time_s\n";
  curves << "kind,subset,split,time_s,accuracy\n";
  const std::pair<const char*, const Dataset*> subsets[] = {{"small", &small}, {"full", &ds.train}};
  for (const auto& kind : cfg.get_list("experiment.kinds")) {
    RunConfig run_cfg = cfg;
    run_cfg.set("model.kind", kind);
    const NetworkSpec spec = model_spec(run_cfg, sc.classes, sc.image_size);
    for (const auto& [subset, train] : subsets) {
      Network<float> net(spec, derive_seed(master, "net/" + kind));
      const SynthRun run = run_training(net, *train, ds.val, &ds.test, sgd);
      const std::size_t per_class = train->size() / sc.classes;
      write_run_outputs(dir / "runs" / (kind + "_" + subset), run);
      summary << kind << ',' << subset << ',' << per_class << ',' << run.best_epoch << ',' << run.best_val_top1 << ','
              << run.test_top1 << ',' << run.test_topk << ',' << run.train_time_s << '\n';
      for (const auto& p : accuracy_vs_time(run.result.log)) {
        curves << kind << ',' << subset << ',' << p.split << ',' << p.time_s << ',' << p.accuracy << '\n';
      }
      out << std::left << std::setw(5) << kind << ' ' << std::setw(6) << subset << " (" << per_class
          << "/class): test top1 " << run.test_top1 << " at epoch " << run.best_epoch << ", " << run.train_time_s
          << " s\n";
    }
  }
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "accuracy_vs_time.csv", curves.str());
  out << "summary: " << (dir / "summary.csv").string() << '\n';
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep mean maps: random-feature mean embeddings inside convolutional networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "config file (key = value with [section] headers)");
    sub->add_option("--set", overrides, "override, e.g. --set train.epochs=5")->take_all();
  };

  // Verb-specific options and positionals become overrides applied after --set.
  std::vector<std::pair<std::string, std::string>> flags;
  const auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flags, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  };

  auto* gen = app.add_subcommand("gen-synth", "render the synthetic texture dataset");
  auto* train = app.add_subcommand("train", "train one network");
  auto* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset split");
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  auto* bench = app.add_subcommand("kernel-bench", "random feature kernel approximation error versus D");
  auto* exper = app.add_subcommand("experiment-synth", "mml / hid / lin on small and full training sets");
  for (auto* sub : {gen, train, eval, grad, bench, exper}) common(sub);

  flag(train, "--kind", "model.kind", "mml, hid, lin or base");
  flag(train, "--mode", "model.mode", "none, replacing, replicating or forking");
  flag(train, "--variants", "model.variants", "comma list of dropout, hidden, freq");
  flag(eval, "--model", "eval.model", "model directory");
  flag(eval, "--dataset", "eval.dataset", "dataset directory");
  flag(eval, "-k", "eval.k", "top-k");
  flag(eval, "--split", "eval.split", "train, val or test");
  flag(grad, "scope", "gradcheck.scope", "layer or net");
  flag(grad, "target", "gradcheck.target", "layer kind or network name, or all");
  flag(grad, "--corrupt", "gradcheck.corrupt", "scale analytic gradients by 1 + x (negative control)");
  flag(bench, "--dims", "bench.dims", "comma list of D");
  flag(bench, "--trials", "bench.trials", "pairs per D");
  flag(bench, "--sigma", "bench.sigma", "bandwidth");
  flag(bench, "--dim", "bench.dim", "input dimension");
  for (auto* sub : {gen, train, eval, grad, bench, exper}) flag(sub, "-o,--output", "run.output_dir", "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    for (const auto& [key, value] : flags) cfg.set(key, value);

    if (gen->parsed()) return cmd_gen_synth(cfg, out);
    if (train->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (grad->parsed()) return cmd_gradcheck(cfg, out);
    if (bench->parsed()) return cmd_kernel_bench(cfg, out);
    if (exper->parsed()) return cmd_experiment_synth(cfg, out);
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace dmm::tools
