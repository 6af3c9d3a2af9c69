#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kardam/config.hpp"
#include "kardam/errors.hpp"
#include "kardam/experiment.hpp"
#include "kardam/plot_data.hpp"

using namespace kardam;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return json::parse(R"({
    "name": "tiny",
    "n": 6, "f": 1, "T": 40, "seed": 11,
    "cost": {"kind": "quadratic_bowl", "dim": 3},
    "staleness": {"kind": "gaussian", "mean": 2, "sigma": 1},
    "lr": {"gamma": 0.1}
  })");
}

std::string error_of(const json& raw) {
  try {
    parse_config(raw);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kardam_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("bench-cli") {

TEST_CASE("resilience condition on n and f") {
  json c = small_config();
  c["n"] = 10;
  c["f"] = 3;
  const std::string msg = error_of(c);
  CHECK(msg.rfind("n: must exceed 3f+1", 0) == 0);
  c["n"] = 11;
  CHECK(error_of(c).empty());
  c["n"] = 10;
  c["filter"] = {{"enabled", false}};
  CHECK(error_of(c).empty());
  c["filter"] = {{"require_resilience", false}};
  CHECK(error_of(c).empty());
}

TEST_CASE("too many Byzantine workers are rejected") {
  json c = small_config();
  c["n"] = 11;
  c["f"] = 3;
  c["workers"] = json::parse(R"([{"count": 7}, {"count": 4, "behavior": {"kind": "negate_amplify"}}])");
  CHECK(error_of(c).find("workers") == 0);
}

TEST_CASE("field-path diagnostics") {
  json c = small_config();
  c["workers"] = json::parse(R"([{"count": 5}, {"count": 1, "behavior": {"kind": "negate_amplify", "kappa": -1}}])");
  CHECK(error_of(c) == "workers[1].behavior.kappa: must be positive");
  c = small_config();
  c["lr"]["gammma"] = 1;
  CHECK(error_of(c).find("lr.gammma") == 0);
  c = small_config();
  c.erase("seed");
  CHECK(error_of(c).find("seed") == 0);
}

TEST_CASE("defaults are materialized and normalization is idempotent") {
  const json norm = normalize_config(small_config());
  CHECK(norm.at("schema_version") == kSchemaVersion);
  CHECK(norm.at("M") == 1);
  CHECK(norm.at("filter").at("enabled") == true);
  CHECK(norm.at("dampening").at("kind") == "inverse");
  CHECK(norm.at("workers").size() == 1);
  CHECK(normalize_config(norm) == norm);
}

TEST_CASE("variants patch the base config") {
  json c = small_config();
  c["variants"] = json::parse(R"([{"name": "a"}, {"name": "b", "dampening": {"kind": "exponential", "alpha": 0.5}}])");
  const ExperimentConfig e = parse_config(c);
  REQUIRE(e.variants.size() == 2);
  CHECK(e.has_variants);
  CHECK(e.variants[0].simulation.dampening.kind == DampeningSpec::Kind::kInverse);
  CHECK(e.variants[1].simulation.dampening.kind == DampeningSpec::Kind::kExponential);
  c["variants"][1]["name"] = "a";
  CHECK_FALSE(error_of(c).empty());
}

TEST_CASE("load_config error kinds") {
  CHECK_THROWS_AS(load_config("/nonexistent/kardam.json"), IoError);
  const fs::path dir = scratch("load");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("CSV and number formatting") {
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK(format_real(2.0) == "2");
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("experiment artifacts reconcile, echo reruns identically and are parallel-safe") {
  json c = small_config();
  c["replicates"] = 3;
  const ExperimentConfig e = parse_config(c);
  const fs::path a = scratch("run_a"), b = scratch("run_b"), echo = scratch("run_echo");
  run_experiment(e, RunOptions{a, std::nullopt, 1});
  run_experiment(e, RunOptions{b, std::nullopt, 3});
  for (const char* f : {"replicate_0.csv", "replicate_1.csv", "replicate_2.csv", "summary.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }

  const json summary = json::parse(slurp(a / "summary.json"));
  CHECK(summary.at("replicates").size() == 3);
  CHECK(summary.at("aggregate").at("final_loss").at("stddev").is_number());
  for (const auto& r : summary.at("replicates")) {
    const std::string csv = slurp(a / r.at("csv").get<std::string>());
    std::int64_t rows = -1, accepted = 0;
    std::istringstream lines(csv);
    std::string line;
    while (std::getline(lines, line)) {
      CHECK(line.back() == '\r');
      if (rows++ < 0) continue;
      // accepted_honest and accepted_byz are columns 6 and 7
      std::istringstream cells(line);
      std::string cell;
      for (int col = 0; std::getline(cells, cell, ','); ++col) {
        if (col == 5 || col == 6) accepted += std::stoll(cell);
      }
    }
    CHECK(rows == r.at("epochs").get<std::int64_t>());
    CHECK(accepted == r.at("epochs").get<std::int64_t>());  // M = 1
  }

  run_experiment(parse_config(summary.at("config")), RunOptions{echo, std::nullopt, 2});
  CHECK(slurp(echo / "summary.json") == slurp(a / "summary.json"));
  CHECK(slurp(echo / "replicate_1.csv") == slurp(a / "replicate_1.csv"));
}

TEST_CASE("variant runs get their own directories and an index") {
  json c = small_config();
  c["variants"] = json::parse(R"([{"name": "inv"}, {"name": "exp", "dampening": {"kind": "exponential", "alpha": 0.5}}])");
  const fs::path out = scratch("variants");
  const ExperimentOutcome o = run_experiment(parse_config(c), RunOptions{out, 2, 1});
  CHECK(o.summaries.size() == 2);
  CHECK(fs::exists(out / "index.json"));
  CHECK(fs::exists(out / "exp" / "replicate_1.csv"));
  CHECK(json::parse(slurp(out / "inv" / "summary.json")).at("config").at("replicates") == 2);
}

TEST_CASE("plot data reshapes, truncates and flags") {
  json c = small_config();
  c["variants"] = json::parse(R"([{"name": "short", "T": 10}, {"name": "long", "T": 15},
      {"name": "wild", "T": 15, "dampening": {"kind": "constant"}, "lr": {"gamma": 20.0},
       "staleness": {"kind": "fixed", "tau": 6, "mean": null, "sigma": null}, "filter": {"enabled": false}}])");
  const fs::path out = scratch("plot");
  const ExperimentOutcome o = run_experiment(parse_config(c), RunOptions{out, std::nullopt, 1});

  std::ostringstream warn;
  auto one = load_plot_series({o.summaries[1]}, PlotMetric::kLoss, warn);
  const std::string single = plot_data_csv(one, warn);
  CHECK(warn.str().empty());
  CHECK(std::count(single.begin(), single.end(), '\n') == 16);
  CHECK(single.rfind("series,epoch,value,diverged\r\n", 0) == 0);

  auto all = load_plot_series(o.summaries, PlotMetric::kAcceptance, warn);
  const std::string csv = plot_data_csv(all, warn);
  CHECK(warn.str().find("truncating") != std::string::npos);
  std::size_t shortest = all[0].values.size();
  for (const auto& s : all) shortest = std::min(shortest, s.values.size());
  CHECK(shortest < 10);  // the unstable series stops early
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(1 + 3 * shortest));
  CHECK(csv.find("tiny/wild,1,") != std::string::npos);
  CHECK(json::parse(slurp(o.summaries[2])).at("diverged") == true);
  CHECK(csv.find(",true\r\n") != std::string::npos);
  CHECK_THROWS_AS(parse_plot_metric("speed"), ConfigError);
}

TEST_CASE("command-line exit codes") {
  const std::string cli = KARDAM_CLI;
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  auto code = [](const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  json c = small_config();
  std::ofstream(dir / "ok.json") << c.dump();
  c["n"] = 4;
  c["f"] = 1;
  std::ofstream(dir / "bad.json") << c.dump();

  CHECK(code(cli + " validate " + (dir / "ok.json").string()) == 0);
  CHECK(code(cli + " validate " + (dir / "bad.json").string()) == 1);
  CHECK(code(cli + " validate " + (dir / "missing.json").string()) == 3);
  CHECK(code(cli + " run " + (dir / "ok.json").string() + " --out /proc/kardam_no_such_dir") == 3);
  CHECK(code(cli + " bogus") == 1);

  CHECK(code("KARDAM_OUT_DIR=" + (dir / "env").string() + " " + cli + " run " + (dir / "ok.json").string()) == 0);
  CHECK(fs::exists(dir / "env" / "summary.json"));
  CHECK(code("KARDAM_OUT_DIR=" + (dir / "env2").string() + " " + cli + " run " + (dir / "ok.json").string() +
             " --out " + (dir / "flag").string()) == 0);
  CHECK(fs::exists(dir / "flag" / "summary.json"));
  CHECK_FALSE(fs::exists(dir / "env2"));
}

}  // TEST_SUITE
