#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kardam/config.hpp"
#include "kardam/errors.hpp"
#include "kardam/experiment.hpp"
#include "kardam/plot_data.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

constexpr const char* kOutEnv = "KARDAM_OUT_DIR";

std::string resolve_out_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  return "out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous Byzantine-resilient SGD simulator"};
  app.require_subcommand(1);

  std::string run_config;
  std::string run_out;
  std::int64_t run_replicates = 0;
  int run_parallel = 1;
  auto* run = app.add_subcommand("run", "Run an experiment and write metrics");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--out", run_out, std::string("Output directory (default: $") + kOutEnv + " or ./out)");
  run->add_option("--replicates", run_replicates, "Override the replicate count")->check(CLI::PositiveNumber);
  run->add_option("--parallel", run_parallel, "Worker threads for replicates")->check(CLI::PositiveNumber);

  std::vector<std::string> plot_inputs;
  std::string plot_metric = "loss";
  std::string plot_out;
  auto* plot = app.add_subcommand("plot-data", "Reshape summaries into long-format CSV");
  plot->add_option("summaries", plot_inputs, "summary.json files")->required();
  plot->add_option("--metric", plot_metric, "loss | grad_norm | acceptance")
      ->check(CLI::IsMember({"loss", "grad_norm", "acceptance"}));
  plot->add_option("--out", plot_out, "Output CSV file")->required();

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults filled in");
  validate->add_option("config", validate_config, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      kardam::ExperimentConfig cfg = kardam::load_config(run_config);
      kardam::RunOptions opts;
      opts.out_dir = resolve_out_dir(run_out);
      if (run_replicates > 0) opts.replicates = run_replicates;
      opts.parallel = run_parallel;
      const kardam::ExperimentOutcome outcome = kardam::run_experiment(std::move(cfg), opts);
      for (const auto& p : outcome.summaries) std::cout << p.string() << "\n";
      if (outcome.numeric_fault) {
        std::cerr << "error: a replicate hit a numeric fault\n";
        return kExitNumeric;
      }
    } else if (*plot) {
      std::vector<std::filesystem::path> paths(plot_inputs.begin(), plot_inputs.end());
      auto series = kardam::load_plot_series(paths, kardam::parse_plot_metric(plot_metric), std::cerr);
      const std::string csv = kardam::plot_data_csv(std::move(series), std::cerr);
      std::ofstream out(plot_out, std::ios::binary | std::ios::trunc);
      if (!out || !(out << csv) || !out.flush()) throw kardam::IoError("cannot write " + plot_out);
    } else if (*validate) {
      const kardam::ExperimentConfig cfg = kardam::load_config(validate_config);
      if (cfg.has_variants) {
        nlohmann::json all = nlohmann::json::array();
        for (const auto& v : cfg.variants) all.push_back({{"name", v.name}, {"config", v.config}});
        std::cout << all.dump(2) << "\n";
      } else {
        std::cout << cfg.variants.front().config.dump(2) << "\n";
      }
    }
  } catch (const kardam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kardam::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const kardam::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
