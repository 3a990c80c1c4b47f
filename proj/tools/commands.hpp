#ifndef EVSI_TOOLS_COMMANDS_HPP
#define EVSI_TOOLS_COMMANDS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evsi/case_study.hpp"
#include "evsi/mlmc.hpp"

namespace evsi::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kNotConverged = 2 };

struct RunConfig {
  std::string command;
  std::string scenario = "1";  // "1" | "2" | "3" | "toy"
  std::vector<double> eps{2.0, 5.0, 10.0, 20.0};
  int m0 = 16;
  std::uint64_t seed = 20200101;
  int threads = 0;
  std::int64_t samples = 0;  // 0: the command's own default
  int levels = 6;            // convergence: highest level
  int max_level = 16;
  std::int64_t evpi_samples = 1000000;
  std::vector<double> evsi;  // enbs: per-person EVSI per scenario, skips estimation
  bool use_importance_sampling = true;
  std::string format = "csv";
  std::filesystem::path out = ".";
  std::filesystem::path model_config;  // empty: built-in inputs

  /// Throws std::invalid_argument on an unusable combination.
  void validate() const;
  bool toy() const { return scenario == "toy"; }
};

/// Numeric table written as CSV (17 significant digits) or as a JSON mirror.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  bool operator==(const Table&) const = default;
};

std::string format_number(double value);
/// Rounded to an integer and grouped in thousands, for the human summary only.
std::string with_thousands(double value);

std::string to_csv(const Table& table);
Table parse_csv(const std::string& text, std::string name = {});
Table read_csv(const std::filesystem::path& path);

struct CommandResult {
  int exit_code = kSuccess;
  std::vector<Table> tables;
  std::vector<std::filesystem::path> files;
  std::string summary;
};

case_study::CaseStudyConfig load_model_config(const RunConfig& config);
std::unique_ptr<DecisionModel> make_model(const RunConfig& config, const case_study::CaseStudyConfig& inputs);
MlmcConfig engine_config(const RunConfig& config, double eps);

struct CostRow {
  double eps = 0.0;
  int final_level = 0;
  bool converged = false;
  double mlmc_cost = 0.0;
  double nmc_cost = 0.0;
  double var_fine = 0.0;  // V[P_L] from the convergence run
};

/// MLMC against nested MC at the level each MLMC run chose. `report` must
/// reach every final level.
std::vector<CostRow> compare_costs(std::span<const MlmcRunResult> runs, std::span<const double> eps,
                                   const ConvergenceReport& report, const MlmcConfig& base);

CommandResult cmd_convergence(const RunConfig& config);
CommandResult cmd_estimate(const RunConfig& config);
CommandResult cmd_compare_cost(const RunConfig& config);
CommandResult cmd_evpi(const RunConfig& config);
CommandResult cmd_enbs(const RunConfig& config);

/// Parses arguments, runs the command and writes its files. Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace evsi::cli

#endif  // EVSI_TOOLS_COMMANDS_HPP
