#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"

using namespace evsi;
using namespace evsi::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("evsi_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "evsi_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

}  // namespace

TEST_CASE("number formatting round-trips through CSV") {
  Table t{"t", {"a", "b", "c"}, {}};
  RandomSource rng(1);
  for (int i = 0; i < 500; ++i) {
    t.rows.push_back({rng.normal() * 1e6, rng.uniform() * 1e-9, std::ldexp(rng.uniform(), -1000)});
  }
  t.rows.push_back({0.1, 1.0 / 3.0, -0.0});
  const Table back = parse_csv(to_csv(t), "t");
  CHECK(back == t);
  CHECK(format_number(0.1) == "0.10000000000000001");
  CHECK_THROWS(parse_csv("a,b\n1,x\n"));
  CHECK_THROWS(parse_csv("a,b\n1\n"));
}

TEST_CASE("thousands separators for the human summary") {
  CHECK(with_thousands(537975.0) == "537,975");
  CHECK(with_thousands(34254453.0) == "34,254,453");
  CHECK(with_thousands(999.4) == "999");
  CHECK(with_thousands(-75000.0) == "-75,000");
  CHECK(with_thousands(0.0) == "0");
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}) == kUsageError);
  CHECK(run({"frobnicate"}) == kUsageError);
  CHECK(run({"evpi", "--scenario", "4"}) == kUsageError);
  CHECK(run({"evpi", "--format", "xml"}) == kUsageError);
  CHECK(run({"estimate", "--scenario", "toy", "--eps", "-1", "--out", fresh_dir("neg").string()}) == kUsageError);
  CHECK(run({"enbs", "--evsi", "1,2", "--out", fresh_dir("enbs_bad").string()}) == kUsageError);
  CHECK(run({"--help"}) == kSuccess);
}

TEST_CASE("unwritable output directory is reported with its path") {
  std::string text;
  const int code = run({"evpi", "--scenario", "toy", "--samples", "100", "--out", "/proc/evsi_no_such_dir"}, &text);
  CHECK(code == kUsageError);
  CHECK(text.find("/proc/evsi_no_such_dir") != std::string::npos);
}

TEST_CASE("convergence table for the toy model") {
  const fs::path dir = fresh_dir("conv");
  REQUIRE(run({"convergence", "--scenario", "toy", "--levels", "6", "--samples", "20000", "--no-is", "--out",
               dir.string()}) == kSuccess);
  const Table t = read_csv(dir / "convergence_toy.csv");
  REQUIRE(t.rows.size() == 7);
  CHECK(t.columns ==
        std::vector<std::string>{"level", "samples", "var_p", "var_dp", "mean_p_abs", "mean_dp_abs", "kurtosis", "cost"});
  for (std::size_t l = 2; l < t.rows.size(); ++l) {
    CHECK(t.rows[l][3] > 0.0);
    if (l > 2) CHECK(t.rows[l][3] < t.rows[l - 1][3]);
  }
  const Table rates = read_csv(dir / "rates_toy.csv");
  REQUIRE(rates.rows.size() == 1);
  CHECK(rates.rows[0][1] > 1.0);
}

TEST_CASE("estimate writes both panels and a summary") {
  const fs::path dir = fresh_dir("est");
  std::string text;
  REQUIRE(run({"estimate", "--scenario", "toy", "--eps", "0.05,0.02", "--evpi-samples", "100000", "--out",
               dir.string()},
              &text) == kSuccess);
  const Table summary = read_csv(dir / "estimate_toy.csv");
  REQUIRE(summary.rows.size() == 2);
  for (const auto& row : summary.rows) {
    CHECK(std::abs(row[1] - 0.2) < 3.0 * row[0]);
    CHECK(row[4] == 1.0);
    CHECK(row[8] == doctest::Approx(row[6] - row[1]));
  }
  const Table samples = read_csv(dir / "samples_toy.csv");
  CHECK(samples.columns == std::vector<std::string>{"eps", "level", "samples"});
  CHECK(text.find("EVSI") != std::string::npos);
}

TEST_CASE("json mirror carries run metadata") {
  const fs::path dir = fresh_dir("json");
  REQUIRE(run({"evpi", "--scenario", "1", "--samples", "20000", "--format", "json", "--seed", "5", "--out",
               dir.string()}) == kSuccess);
  const auto doc = nlohmann::json::parse(slurp(dir / "evpi_s1.json"));
  CHECK(doc["columns"][1] == "evpi");
  CHECK(doc["rows"].size() == 1);
  CHECK(doc["rows"][0]["samples"] == 20000.0);
  CHECK(doc["metadata"]["config"]["seed"] == 5);
  CHECK(doc["metadata"]["total_model_evaluations"] == 20000.0);
  CHECK(doc["metadata"].contains("wall_time_seconds"));
}

TEST_CASE("seeded estimate runs are bit-identical") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  for (const auto& dir : {a, b}) {
    REQUIRE(run({"estimate", "--scenario", "2", "--eps", "40", "--seed", "77", "--evpi-samples", "50000", "--out",
                 dir.string()}) == kSuccess);
  }
  for (const char* name : {"estimate_s2.csv", "samples_s2.csv"}) {
    CHECK(slurp(a / name) == slurp(b / name));
    CHECK(!slurp(a / name).empty());
  }
}

TEST_CASE("a run that hits the maximum level exits with 2") {
  const fs::path dir = fresh_dir("nc");
  std::string text;
  CHECK(run({"estimate", "--scenario", "1", "--eps", "20", "--max-level", "2", "--levels", "2", "--evpi-samples",
             "1000", "--out", dir.string()},
            &text) == kNotConverged);
  const Table summary = read_csv(dir / "estimate_s1.csv");
  CHECK(summary.rows[0][4] == 0.0);
  CHECK(text.find("maximum level") != std::string::npos);
}

TEST_CASE("enbs from given per-person values") {
  const fs::path dir = fresh_dir("enbs");
  std::string text;
  REQUIRE(run({"enbs", "--evsi", "25,1031,1787", "--out", dir.string()}, &text) == kSuccess);
  const Table t = read_csv(dir / "enbs.csv");
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][5] == 462975.0);
  CHECK(t.rows[1][5] == 21786089.0);
  CHECK(t.rows[2][5] == 34254453.0);
  CHECK(text.find("$34,254,453") != std::string::npos);
  CHECK(slurp(dir / "enbs.csv").find("34254453") != std::string::npos);
}

TEST_CASE("config file supplies flags and the command line overrides them") {
  const fs::path dir = fresh_dir("cfg");
  fs::create_directories(dir);
  const fs::path ini = dir / "run.toml";
  std::ofstream(ini) << "[evpi]\nscenario = \"toy\"\nsamples = 1234\nseed = 3\n";
  REQUIRE(run({"--config", ini.string(), "evpi", "--samples", "4321", "--out", dir.string()}) == kSuccess);
  const Table t = read_csv(dir / "evpi_toy.csv");
  CHECK(t.rows[0][0] == 4321.0);
  REQUIRE(run({"--config", ini.string(), "evpi", "--out", (dir / "b").string()}) == kSuccess);
  CHECK(read_csv(dir / "b" / "evpi_toy.csv").rows[0][0] == 1234.0);
}

TEST_CASE("the executable reports exit codes") {
  const std::string cli = EVSI_CLI_PATH;
  const fs::path dir = fresh_dir("proc");
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(status(cli + " evpi --scenario toy --samples 1000 --out " + dir.string()) == 0);
  CHECK(status(cli + " evpi --scenario 9") == 1);
  CHECK(fs::exists(dir / "evpi_toy.csv"));
}
