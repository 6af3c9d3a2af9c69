#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace kardam {

enum class PlotMetric { kLoss, kGradNorm, kAcceptance };

PlotMetric parse_plot_metric(const std::string& name);  // ConfigError on unknown names

struct PlotSeries {
  std::string name;
  bool diverged = false;
  std::vector<double> values;  // replicate mean, index = epoch - 1
};

/// Loads one series per summary.json, averaging its replicate CSVs epoch by epoch.
/// Throws IoError when an artifact cannot be read.
std::vector<PlotSeries> load_plot_series(const std::vector<std::filesystem::path>& summaries, PlotMetric metric,
                                         std::ostream& warnings);

/// Long-format CSV: series,epoch,value,diverged. Every series is cut to the
/// shortest horizon, with a note written to `warnings` when that drops rows.
std::string plot_data_csv(std::vector<PlotSeries> series, std::ostream& warnings);

}  // namespace kardam
