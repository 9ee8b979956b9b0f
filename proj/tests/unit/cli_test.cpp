#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "dmm/run_config.hpp"
#include "oracles.hpp"

namespace dmm::tools {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "dmm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

const std::string kDesk = std::string(DMM_CONFIG_DIR) + "/desk_synth.cfg";

// Small enough for a unit test: few images, few overlays, narrow head.
std::vector<std::string> quick(std::vector<std::string> args) {
  for (const char* s : {"data.train_per_class=3", "data.val_per_class=2", "data.test_per_class=2",
                        "data.patches_per_image=40", "model.frequencies=32", "model.extension_frequencies=64",
                        "model.hid_width=32", "train.epochs=2", "train.batch_size=4"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  return args;
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
  const auto r = run({"train", "--set", "train.epochz=3"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("train.epochz"), std::string::npos) << r.err;
}

TEST(Cli, GenSynthCountsAndDeterminism) {
  const auto root = oracle::scratch_dir("cli_gen");
  const auto a = run({"gen-synth", "-c", kDesk, "-o", (root / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("manifest: "), std::string::npos);
  EXPECT_NE(a.out.find("train 0:10 1:10 2:10 3:10"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("test 0:100 1:100 2:100 3:100"), std::string::npos) << a.out;
  EXPECT_EQ(count_files(root / "a" / "images" / "train"), 40u);
  EXPECT_EQ(count_files(root / "a" / "images" / "test"), 400u);
  EXPECT_EQ(lines(slurp(root / "a" / "manifest.txt")).size(), 40u + 40u + 400u);

  ASSERT_EQ(run({"gen-synth", "-c", kDesk, "-o", (root / "b").string()}).code, 0);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    if (rel == "config.cfg") continue;  // records the output directory
    ASSERT_EQ(slurp(e.path()), slurp(root / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 480u);
}

TEST(Cli, MissingTextureDirectoryNamesThePath) {
  const auto root = oracle::scratch_dir("cli_bank");
  const std::string missing = (root / "no_such_textures").string();
  const auto r = run({"gen-synth", "-o", (root / "out").string(), "--set", "data.bank=directory", "--set",
                      "data.bank_dir=" + missing});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, TrainWritesMetricsModelAndConfig) {
  const auto root = oracle::scratch_dir("cli_train");
  const auto out_dir = root / "run";
  const auto r = run(quick({"train", "-c", kDesk, "--kind", "mml", "-o", out_dir.string()}));
  ASSERT_EQ(r.code, 0) << r.err << r.out;
  const auto metrics = lines(slurp(out_dir / "metrics.csv"));
  ASSERT_GE(metrics.size(), 3u);  // header + at least two evaluations
  EXPECT_EQ(metrics[0], "time_s,epoch,split,top1,topk,loss");
  EXPECT_TRUE(fs::exists(out_dir / "metrics.json"));
  EXPECT_TRUE(fs::exists(out_dir / "accuracy_vs_time.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "model" / "model.json"));
  EXPECT_TRUE(fs::exists(out_dir / "snapshots" / "epoch_0002"));
  const auto saved = RunConfig::load(out_dir / "config.cfg");
  EXPECT_EQ(saved.get("model.kind"), "mml");
  EXPECT_EQ(saved.get_size("train.epochs"), 2u);
  // Nothing written beside the declared output directory.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(root)) ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST(Cli, TrainIsDeterministic) {
  const auto root = oracle::scratch_dir("cli_train_det");
  const auto args = [&](const std::string& name) {
    return quick({"train", "-c", kDesk, "--kind", "lin", "-o", (root / name).string()});
  };
  ASSERT_EQ(run(args("a")).code, 0);
  ASSERT_EQ(run(args("b")).code, 0);
  const auto strip_time = [](const std::string& csv) {
    std::string out;
    for (const auto& l : lines(csv)) out += l.substr(l.find(',')) + "\n";
    return out;
  };
  EXPECT_EQ(strip_time(slurp(root / "a" / "metrics.csv")), strip_time(slurp(root / "b" / "metrics.csv")));
  EXPECT_EQ(slurp(root / "a" / "model" / "params" / "fc_out.weight.dmmt"),
            slurp(root / "b" / "model" / "params" / "fc_out.weight.dmmt"));
}

TEST(Cli, InvalidKindListsValidKinds) {
  const auto r = run(quick({"train", "--kind", "cnn", "-o", oracle::scratch_dir("cli_kind").string()}));
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.code, kExitConfig);
  for (const char* k : {"mml", "hid", "lin"}) EXPECT_NE(r.err.find(k), std::string::npos) << r.err;
}

TEST(Cli, ExtensionTrainsOneEpoch) {
  const auto root = oracle::scratch_dir("cli_ext");
  auto args = quick({"train", "-c", kDesk, "--kind", "base", "--mode", "replacing", "--variants",
                     "dropout,hidden,freq", "-o", root.string(), "--set", "model.hidden_width=16"});
  args.push_back("--set");
  args.push_back("train.epochs=1");
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("replacing"), std::string::npos);
}

TEST(Cli, EvalReportsAccuracyAndJson) {
  const auto root = oracle::scratch_dir("cli_eval");
  auto gen = quick({"gen-synth", "-c", kDesk, "-o", (root / "data").string()});
  ASSERT_EQ(run(gen).code, 0);
  ASSERT_EQ(run(quick({"train", "-c", kDesk, "--kind", "lin", "-o", (root / "run").string(), "--set",
                       "data.dir=" + (root / "data").string()}))
                .code,
            0);
  const auto r = run({"eval", "--model", (root / "run" / "model").string(), "--dataset", (root / "data").string(),
                      "-k", "2", "-o", (root / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("top1 = "), std::string::npos);
  EXPECT_NE(r.out.find("top2 = "), std::string::npos);
  EXPECT_NE(slurp(root / "eval" / "eval.json").find("\"top1\""), std::string::npos);

  const auto full = run({"eval", "--model", (root / "run" / "model").string(), "--dataset",
                         (root / "data").string(), "-k", "4", "-o", (root / "eval4").string()});
  ASSERT_EQ(full.code, 0);
  EXPECT_NE(full.out.find("top4 = 1\n"), std::string::npos) << full.out;

  EXPECT_EQ(run({"eval", "--model", (root / "nothing").string(), "--dataset", (root / "data").string(), "-o",
                 (root / "eval_bad").string()})
                .code,
            kExitData);
}

TEST(Cli, GradcheckMeanMapLayerPasses) {
  const auto r = run({"gradcheck", "layer", "meanmap", "-o", oracle::scratch_dir("cli_gc_layer").string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, GradcheckDeskMmlNetworkPasses) {
  const auto dir = oracle::scratch_dir("cli_gc_net");
  const auto r = run({"gradcheck", "net", "mml-desk", "-o", dir.string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_TRUE(fs::exists(dir / "gradcheck.csv"));
}

TEST(Cli, CorruptedGradientFails) {
  const auto r = run({"gradcheck", "layer", "meanmap", "--corrupt", "0.01", "-o",
                      oracle::scratch_dir("cli_gc_bad").string()});
  EXPECT_EQ(r.code, kExitGradcheck);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("meanmap"), std::string::npos);
}

TEST(Cli, KernelBenchFormat) {
  const auto dir = oracle::scratch_dir("cli_bench");
  const auto r = run({"kernel-bench", "--dims", "1,64,4096", "--trials", "100", "-o", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(slurp(dir / "kernel_bench.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "D,median_err,max_err");
  EXPECT_EQ(rows[1].substr(0, 2), "1,");
  EXPECT_NE(r.out.find("D,median_err,max_err"), std::string::npos);
}

TEST(KernelErrorTable, SingleFeatureErrorBound) {
  // With the sqrt(2/D) constant a single feature product lies in [-2, 2],
  // so |z^T z - K| <= 2 + K <= 3.
  const auto rows = kernel_error_table({1}, 500, 1.0, 8, 3);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_LE(rows[0].max_err, 3.0);
  EXPECT_LE(rows[0].median_err, rows[0].max_err);
}

TEST(KernelErrorTable, ErrorShrinksWithMoreFeatures) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto rows = kernel_error_table({64, 4096}, 100, 1.0, 8, seed);
    EXPECT_LT(rows[1].median_err, rows[0].median_err) << "seed " << seed;
  }
}

TEST(Cli, OutputRootEnvironmentVariable) {
  const auto root = oracle::scratch_dir("cli_root");
  ::setenv("DMM_OUTPUT_ROOT", root.string().c_str(), 1);
  const auto r = run({"kernel-bench", "--dims", "4", "--trials", "5", "-o", "rel/bench"});
  ::unsetenv("DMM_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "rel" / "bench" / "kernel_bench.csv"));
}

TEST(Cli, ExperimentProducesSixRuns) {
  const auto dir = oracle::scratch_dir("cli_experiment");
  auto args = quick({"experiment-synth", "-c", kDesk, "-o", dir.string()});
  for (const char* s : {"data.train_per_class=4", "experiment.small_per_class=2", "train.epochs=1"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = lines(slurp(dir / "summary.csv"));
  ASSERT_EQ(summary.size(), 7u);
  EXPECT_EQ(summary[0], "kind,subset,train_per_class,best_epoch,val_top1,test_top1,test_topk,train_time_s");
  std::size_t runs = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "runs")) ++runs;
  EXPECT_EQ(runs, 6u);
  EXPECT_TRUE(fs::exists(dir / "accuracy_vs_time.csv"));
}

}  // namespace
}  // namespace dmm::tools
