#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kardam/config.hpp"
#include "kardam/simulation.hpp"

namespace kardam {

struct ReplicateResult {
  std::int64_t index = 0;
  std::uint64_t seed = 0;
  RunTrace trace;
};

/// Runs replicate k with seed (config seed + k) for k in [0, replicates), on up
/// to `parallel` threads. Results come back ordered by replicate index.
std::vector<ReplicateResult> run_replicates(const SimulationConfig& config, std::int64_t replicates, int parallel);

/// Shortest text that keeps 17 significant digits ("%.17g").
std::string format_real(double x);

/// RFC-4180 field quoting (only when needed).
std::string csv_field(const std::string& s);

/// Per-epoch CSV of one run.
std::string epochs_csv(const RunTrace& trace);

nlohmann::json replicate_json(const ReplicateResult& r);

/// Aggregate summary of one variant's replicates.
nlohmann::json summarize(const std::string& experiment, const ExperimentVariant& variant,
                         const std::vector<ReplicateResult>& results);

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::int64_t> replicates;  // overrides every variant's count
  int parallel = 1;
};

struct ExperimentOutcome {
  bool numeric_fault = false;
  std::vector<std::filesystem::path> summaries;
};

/// Runs every variant and writes replicate_<k>.csv plus summary.json (one
/// directory per variant when the config has variants). Throws IoError.
ExperimentOutcome run_experiment(ExperimentConfig config, const RunOptions& options);

}  // namespace kardam
