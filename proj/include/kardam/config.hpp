#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kardam/simulation.hpp"

namespace kardam {

inline constexpr int kSchemaVersion = 1;

/// One fully materialized configuration (a config without variants has one).
struct ExperimentVariant {
  std::string name;
  nlohmann::json config;  // normalized: every default written out
  SimulationConfig simulation;
  std::int64_t replicates = 1;
};

struct ExperimentConfig {
  std::string name;
  nlohmann::json base;  // normalized base config, variants included
  std::vector<ExperimentVariant> variants;
  bool has_variants = false;
};

/// Fills defaults and checks every field; throws ConfigError with a
/// "path.to.field: message" diagnostic. The result parses to itself.
nlohmann::json normalize_config(const nlohmann::json& raw);

/// Builds the simulation for a normalized single-variant config. Datasets are
/// generated here from their own seed, independent of the run seed.
SimulationConfig build_simulation(const nlohmann::json& normalized);

ExperimentConfig parse_config(const nlohmann::json& raw);
/// Reads and parses a config file; IoError when unreadable, ConfigError when invalid.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace kardam
