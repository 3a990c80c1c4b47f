#include "commands.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "evsi/toy_model.hpp"

#ifndef EVSI_DEFAULT_CONFIG
#define EVSI_DEFAULT_CONFIG ""
#endif

namespace evsi::cli {
namespace {

using Clock = std::chrono::steady_clock;
constexpr std::uint64_t kEvpiSalt = 0x45565049;

std::string tag(const RunConfig& config) { return config.toy() ? "toy" : "s" + config.scenario; }

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

nlohmann::json config_echo(const RunConfig& c) {
  return {{"command", c.command},
          {"scenario", c.scenario},
          {"eps", c.eps},
          {"m0", c.m0},
          {"seed", c.seed},
          {"threads", c.threads},
          {"samples", c.samples},
          {"levels", c.levels},
          {"max_level", c.max_level},
          {"evpi_samples", c.evpi_samples},
          {"evsi", c.evsi},
          {"importance_sampling", c.use_importance_sampling},
          {"model_config", c.model_config.string()}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

// Writes every table in the chosen format and records the paths.
void write_outputs(CommandResult& result, const RunConfig& config, double evaluations, double wall) {
  std::error_code ec;
  std::filesystem::create_directories(config.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + config.out.string() + ": " + ec.message());
  for (const auto& table : result.tables) {
    std::filesystem::path path = config.out / (table.name + "." + config.format);
    if (config.format == "csv") {
      write_text(path, to_csv(table));
    } else {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : table.rows) {
        nlohmann::json r = nlohmann::json::object();
        for (std::size_t i = 0; i < table.columns.size(); ++i) r[table.columns[i]] = row[i];
        rows.push_back(std::move(r));
      }
      nlohmann::json doc = {{"table", table.name},
                            {"columns", table.columns},
                            {"rows", rows},
                            {"metadata",
                             {{"config", config_echo(config)},
                              {"total_model_evaluations", evaluations},
                              {"wall_time_seconds", wall}}}};
      write_text(path, doc.dump(2) + "\n");
    }
    result.files.push_back(path);
  }
}

EvpiEstimate run_evpi(const DecisionModel& model, const RunConfig& config, std::size_t n) {
  RandomSource rng(config.seed, stream_key(kEvpiSalt, n));
  return estimate_evpi(model, n, rng);
}

}  // namespace

void RunConfig::validate() const {
  if (scenario != "1" && scenario != "2" && scenario != "3" && scenario != "toy") {
    throw std::invalid_argument("scenario must be 1, 2, 3 or toy");
  }
  if (eps.empty()) throw std::invalid_argument("eps list is empty");
  for (double e : eps) {
    if (!(e > 0.0) || !std::isfinite(e)) throw std::invalid_argument("eps values must be positive");
  }
  if (format != "csv" && format != "json") throw std::invalid_argument("format must be csv or json");
  if (m0 < 2 || m0 % 2 != 0) throw std::invalid_argument("m0 must be an even integer >= 2");
  if (samples < 0) throw std::invalid_argument("samples must be non-negative");
  if (levels < 0 || levels > max_level) throw std::invalid_argument("levels must lie in 0..max-level");
  if (threads < 0) throw std::invalid_argument("threads must be non-negative");
  if (evpi_samples < 2) throw std::invalid_argument("evpi samples must be at least 2");
}

std::string format_number(double value) { return fmt::format("{:.17g}", value); }

std::string with_thousands(double value) {
  const double r = std::round(value);
  std::string digits = fmt::format("{:.0f}", std::abs(r));
  std::string grouped;
  const auto n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    grouped += digits[i];
    if ((n - i - 1) % 3 == 0 && i + 1 < n) grouped += ',';
  }
  return (r < 0 ? "-" : "") + grouped;
}

std::string to_csv(const Table& table) {
  std::string text;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    text += (i ? "," : "") + table.columns[i];
  }
  text += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      text += (i ? "," : "") + format_number(row[i]);
    }
    text += '\n';
  }
  return text;
}

Table parse_csv(const std::string& text, std::string name) {
  Table table;
  table.name = std::move(name);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV");
  std::istringstream header(line);
  for (std::string cell; std::getline(header, cell, ',');) table.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) {
      std::size_t used = 0;
      row.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::runtime_error("bad CSV number: " + cell);
    }
    if (row.size() != table.columns.size()) throw std::runtime_error("CSV row width differs from header");
    table.rows.push_back(std::move(row));
  }
  return table;
}

Table read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_csv(buf.str(), path.stem().string());
}

case_study::CaseStudyConfig load_model_config(const RunConfig& config) {
  if (config.model_config.empty()) return case_study::CaseStudyConfig::defaults();
  return case_study::load_config(config.model_config);
}

std::unique_ptr<DecisionModel> make_model(const RunConfig& config, const case_study::CaseStudyConfig& inputs) {
  if (config.toy()) return std::make_unique<ToyModel>();
  return std::make_unique<case_study::CaseStudyModel>(inputs, std::stoi(config.scenario));
}

MlmcConfig engine_config(const RunConfig& config, double eps) {
  MlmcConfig c;
  c.m0 = config.m0;
  c.eps = eps;
  c.max_level = config.max_level;
  c.use_importance_sampling = config.use_importance_sampling;
  c.seed = config.seed;
  c.threads = config.threads;
  // Keyed by the eps value so a run does not depend on its position in the list.
  c.run_id = stream_key(std::bit_cast<std::uint64_t>(eps), 0);
  return c;
}

std::vector<CostRow> compare_costs(std::span<const MlmcRunResult> runs, std::span<const double> eps,
                                   const ConvergenceReport& report, const MlmcConfig& base) {
  if (runs.size() != eps.size()) throw std::invalid_argument("compare_costs: one run per eps required");
  std::vector<CostRow> rows;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& run = runs[i];
    if (static_cast<std::size_t>(run.final_level) >= report.rows.size()) {
      throw std::invalid_argument("compare_costs: convergence run stops below the chosen level");
    }
    MlmcConfig c = base;
    c.eps = eps[i];
    CostRow row;
    row.eps = eps[i];
    row.final_level = run.final_level;
    row.converged = run.converged;
    row.mlmc_cost = run.total_cost;
    row.var_fine = report.rows[static_cast<std::size_t>(run.final_level)].var_fine;
    row.nmc_cost = nested_mc_cost(row.var_fine, run.final_level, c);
    rows.push_back(row);
  }
  return rows;
}

CommandResult cmd_convergence(const RunConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const auto inputs = load_model_config(config);
  const auto model = make_model(config, inputs);
  const std::int64_t n = config.samples > 0 ? config.samples : 10000;
  const ConvergenceReport report = convergence_report(*model, config.levels, n, engine_config(config, config.eps[0]));

  CommandResult result;
  Table levels{"convergence_" + tag(config),
               {"level", "samples", "var_p", "var_dp", "mean_p_abs", "mean_dp_abs", "kurtosis", "cost"},
               {}};
  double evaluations = 0.0;
  for (const auto& r : report.rows) {
    levels.rows.push_back({static_cast<double>(r.level), static_cast<double>(r.n), r.var_fine, r.var_delta,
                           std::abs(r.mean_fine), std::abs(r.mean_delta), r.kurtosis, r.cost});
    evaluations += r.cost * static_cast<double>(r.n);
  }
  result.tables.push_back(std::move(levels));
  if (report.rates_available) {
    result.tables.push_back({"rates_" + tag(config), {"alpha", "beta"}, {{report.alpha, report.beta}}});
  }
  write_outputs(result, config, evaluations, seconds_since(start));
  result.summary = report.rates_available
                       ? fmt::format("alpha {:.3f}, beta {:.3f} over levels 2..{}", report.alpha, report.beta,
                                     config.levels)
                       : std::string("too few levels to regress rates");
  return result;
}

CommandResult cmd_estimate(const RunConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const auto inputs = load_model_config(config);
  const auto model = make_model(config, inputs);
  const EvpiEstimate evpi = run_evpi(*model, config, static_cast<std::size_t>(config.evpi_samples));

  CommandResult result;
  Table samples{"samples_" + tag(config), {"eps", "level", "samples"}, {}};
  Table summary{"estimate_" + tag(config),
                {"eps", "estimate", "std_error", "final_level", "converged", "total_cost", "evpi", "evpi_std_error",
                 "evsi"},
                {}};
  const bool population = !config.toy();
  const case_study::Scenario* scenario = nullptr;
  if (population) {
    summary.columns.insert(summary.columns.end(), {"population_evsi", "study_cost", "enbs"});
    scenario = &inputs.scenario(std::stoi(config.scenario));
  }
  double evaluations = static_cast<double>(config.evpi_samples);
  std::string text;
  for (double eps : config.eps) {
    const MlmcRunResult run = run_mlmc(*model, engine_config(config, eps));
    evaluations += run.total_cost;
    if (!run.converged) result.exit_code = kNotConverged;
    for (std::size_t l = 0; l < run.samples.size(); ++l) {
      samples.rows.push_back({eps, static_cast<double>(l), static_cast<double>(run.samples[l])});
    }
    const double evsi = evpi.estimate - run.estimate;
    std::vector<double> row{eps,           run.estimate,   std::sqrt(run.variance),
                            static_cast<double>(run.final_level), run.converged ? 1.0 : 0.0,
                            run.total_cost, evpi.estimate, evpi.std_error,
                            evsi};
    text += fmt::format("eps {}: EVPI-EVSI {:.2f} (L={}{}), EVPI {:.2f} +- {:.2f}, EVSI {:.2f}", eps, run.estimate,
                        run.final_level, run.converged ? "" : ", NOT CONVERGED", evpi.estimate, evpi.std_error, evsi);
    if (population) {
      const double pop = case_study::population_evsi(evsi, inputs.population);
      const double net = case_study::enbs(pop, scenario->study_cost);
      row.insert(row.end(), {pop, scenario->study_cost, net});
      text += fmt::format(", population EVSI ${}, ENBS ${}", with_thousands(pop), with_thousands(net));
    }
    text += '\n';
    summary.rows.push_back(std::move(row));
  }
  result.tables.push_back(std::move(samples));
  result.tables.push_back(std::move(summary));
  write_outputs(result, config, evaluations, seconds_since(start));
  result.summary = text;
  return result;
}

CommandResult cmd_compare_cost(const RunConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const auto inputs = load_model_config(config);
  const auto model = make_model(config, inputs);
  std::vector<MlmcRunResult> runs;
  int top = 0;
  double evaluations = 0.0;
  CommandResult result;
  for (double eps : config.eps) {
    runs.push_back(run_mlmc(*model, engine_config(config, eps)));
    top = std::max(top, runs.back().final_level);
    evaluations += runs.back().total_cost;
    if (!runs.back().converged) result.exit_code = kNotConverged;
  }
  const std::int64_t n = config.samples > 0 ? config.samples : 10000;
  const MlmcConfig base = engine_config(config, config.eps[0]);
  const ConvergenceReport report = convergence_report(*model, top, n, base);
  for (const auto& r : report.rows) evaluations += r.cost * static_cast<double>(r.n);
  const auto rows = compare_costs(runs, config.eps, report, base);

  Table table{"cost_" + tag(config),
              {"eps", "final_level", "converged", "mlmc_cost", "nmc_cost", "eps2_mlmc_cost", "eps2_nmc_cost",
               "var_p_final", "cost_ratio"},
              {}};
  std::string text;
  for (const auto& r : rows) {
    const double e2 = r.eps * r.eps;
    table.rows.push_back({r.eps, static_cast<double>(r.final_level), r.converged ? 1.0 : 0.0, r.mlmc_cost,
                          r.nmc_cost, e2 * r.mlmc_cost, e2 * r.nmc_cost, r.var_fine, r.nmc_cost / r.mlmc_cost});
    text += fmt::format("eps {}: L={}, MLMC cost {}, nested MC cost {}, saving x{:.1f}\n", r.eps, r.final_level,
                        with_thousands(r.mlmc_cost), with_thousands(r.nmc_cost), r.nmc_cost / r.mlmc_cost);
  }
  result.tables.push_back(std::move(table));
  write_outputs(result, config, evaluations, seconds_since(start));
  result.summary = text;
  return result;
}

CommandResult cmd_evpi(const RunConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const auto inputs = load_model_config(config);
  const auto model = make_model(config, inputs);
  const std::int64_t n = config.samples > 0 ? config.samples : config.evpi_samples;
  if (n < 2) throw std::invalid_argument("evpi needs at least two samples");
  const EvpiEstimate evpi = run_evpi(*model, config, static_cast<std::size_t>(n));

  CommandResult result;
  Table table{"evpi_" + tag(config), {"samples", "evpi", "std_error", "best_decision"}, {}};
  std::vector<double> row{static_cast<double>(evpi.samples), evpi.estimate, evpi.std_error,
                          static_cast<double>(evpi.best_decision + 1)};
  for (std::size_t d = 0; d < evpi.decision_means.size(); ++d) {
    table.columns.push_back(fmt::format("mean_nb_{}", d + 1));
    row.push_back(evpi.decision_means[d]);
  }
  table.rows.push_back(std::move(row));
  result.tables.push_back(std::move(table));
  write_outputs(result, config, static_cast<double>(n), seconds_since(start));
  result.summary = fmt::format("EVPI {:.2f} +- {:.2f} from {} samples", evpi.estimate, evpi.std_error,
                               with_thousands(static_cast<double>(n)));
  return result;
}

CommandResult cmd_enbs(const RunConfig& config) {
  config.validate();
  if (config.toy()) throw std::invalid_argument("enbs needs a case-study scenario");
  const auto start = Clock::now();
  const auto inputs = load_model_config(config);
  if (!config.evsi.empty() && config.evsi.size() != inputs.scenarios.size()) {
    throw std::invalid_argument(fmt::format("--evsi needs one value per scenario ({})", inputs.scenarios.size()));
  }
  CommandResult result;
  Table table{"enbs", {"scenario", "evsi", "population", "population_evsi", "study_cost", "enbs"}, {}};
  double evaluations = 0.0;
  std::string text;
  for (std::size_t i = 0; i < inputs.scenarios.size(); ++i) {
    const auto& sc = inputs.scenarios[i];
    double evsi = 0.0;
    if (!config.evsi.empty()) {
      evsi = config.evsi[i];
    } else {
      const case_study::CaseStudyModel model(inputs, sc.id);
      const EvpiEstimate evpi = run_evpi(model, config, static_cast<std::size_t>(config.evpi_samples));
      const MlmcRunResult run = run_mlmc(model, engine_config(config, config.eps[0]));
      if (!run.converged) result.exit_code = kNotConverged;
      evaluations += run.total_cost + static_cast<double>(config.evpi_samples);
      evsi = evpi.estimate - run.estimate;
    }
    const double pop = case_study::population_evsi(evsi, inputs.population);
    const double net = case_study::enbs(pop, sc.study_cost);
    table.rows.push_back({static_cast<double>(sc.id), evsi, inputs.population.total_discounted_population, pop,
                          sc.study_cost, net});
    text += fmt::format("scenario {}: EVSI {:.2f} per person, population EVSI ${}, study ${}, ENBS ${}\n", sc.id,
                        evsi, with_thousands(pop), with_thousands(sc.study_cost), with_thousands(net));
  }
  result.tables.push_back(std::move(table));
  write_outputs(result, config, evaluations, seconds_since(start));
  result.summary = text;
  return result;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilevel Monte Carlo estimation of EVSI for the three-treatment case study"};
  app.set_config("--config", "", "TOML/INI file supplying any flag; flags on the command line win");
  app.require_subcommand(1);
  RunConfig config;
  std::string model_config = EVSI_DEFAULT_CONFIG;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--scenario", config.scenario, "1, 2, 3 or toy")->check(CLI::IsMember({"1", "2", "3", "toy"}));
    sub->add_option("--eps", config.eps, "comma-separated accuracies")->delimiter(',');
    sub->add_option("--m0", config.m0, "inner samples at level 0");
    sub->add_option("--seed", config.seed);
    sub->add_option("--samples", config.samples, "samples per level (convergence) or outer samples (evpi)");
    sub->add_option("--levels", config.levels, "highest level of the convergence run");
    sub->add_option("--max-level", config.max_level);
    sub->add_option("--evpi-samples", config.evpi_samples);
    sub->add_flag("--no-is", [&](std::int64_t) { config.use_importance_sampling = false; },
                  "sample inner draws from the prior");
    sub->add_option("--format", config.format)->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--out", config.out, "output directory");
    sub->add_option("--threads", config.threads, "worker cap, 0 = all cores");
    sub->add_option("--model-config", model_config, "JSON model inputs");
  };
  auto* convergence = app.add_subcommand("convergence", "per-level statistics and rate estimates");
  auto* estimate = app.add_subcommand("estimate", "adaptive MLMC for each eps with EVPI, EVSI and ENBS");
  auto* compare = app.add_subcommand("compare-cost", "MLMC against nested MC cost for each eps");
  auto* evpi = app.add_subcommand("evpi", "plain Monte Carlo EVPI");
  auto* enbs = app.add_subcommand("enbs", "population EVSI and ENBS for every scenario");
  for (auto* sub : {convergence, estimate, compare, evpi, enbs}) common(sub);
  enbs->add_option("--evsi", config.evsi, "per-person EVSI for each scenario")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kUsageError;
  }
  config.command = app.get_subcommands().front()->get_name();
  if (!model_config.empty() && std::filesystem::exists(model_config)) config.model_config = model_config;

  try {
    CommandResult result;
    if (config.command == "convergence") {
      result = cmd_convergence(config);
    } else if (config.command == "estimate") {
      result = cmd_estimate(config);
    } else if (config.command == "compare-cost") {
      result = cmd_compare_cost(config);
    } else if (config.command == "evpi") {
      result = cmd_evpi(config);
    } else {
      result = cmd_enbs(config);
    }
    out << result.summary;
    if (!result.summary.empty() && result.summary.back() != '\n') out << '\n';
    for (const auto& f : result.files) out << "wrote " << f.string() << "\n";
    if (result.exit_code == kNotConverged) err << "warning: at least one run hit the maximum level\n";
    return result.exit_code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

}  // namespace evsi::cli
