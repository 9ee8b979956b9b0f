#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dmm/run_config.hpp"

namespace dmm::tools {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitGradcheck = 5,
};

// run.output_dir, placed under $DMM_OUTPUT_ROOT when that is set and the
// directory is relative.
std::filesystem::path output_dir(const RunConfig& cfg);

int cmd_gen_synth(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);
int cmd_kernel_bench(const RunConfig& cfg, std::ostream& out);
int cmd_experiment_synth(const RunConfig& cfg, std::ostream& out);

struct KernelErrorRow {
  std::size_t frequencies = 0;
  double median_err = 0.0;
  double max_err = 0.0;
};

// |z(x)^T z(y) - K(x, y)| over `trials` random pairs in `dim` dimensions,
// with a fresh unbiased basis per pair.
std::vector<KernelErrorRow> kernel_error_table(const std::vector<std::size_t>& dims, std::size_t trials, double sigma,
                                               std::size_t dim, std::uint64_t seed);

// Parses the command line, runs the verb and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dmm::tools
