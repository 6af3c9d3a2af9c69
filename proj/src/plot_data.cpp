#include "kardam/plot_data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kardam/errors.hpp"
#include "kardam/experiment.hpp"

namespace kardam {

namespace {

std::vector<std::string> split_row(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

double to_double(const std::string& s, const std::filesystem::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError(file.string() + ": malformed number '" + s + "'");
}

std::vector<double> read_metric(const std::filesystem::path& file, PlotMetric metric) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(file.string() + ": empty file");
  const std::vector<std::string> header = split_row(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  auto need = [&](const char* name) {
    auto it = col.find(name);
    if (it == col.end()) throw IoError(file.string() + ": missing column " + name);
    return it->second;
  };

  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> row = split_row(line);
    if (row.size() != header.size()) throw IoError(file.string() + ": ragged row");
    auto get = [&](const char* name) { return to_double(row[need(name)], file); };
    switch (metric) {
      case PlotMetric::kLoss:
        out.push_back(get("loss"));
        break;
      case PlotMetric::kGradNorm:
        out.push_back(get("grad_norm"));
        break;
      case PlotMetric::kAcceptance: {
        const double acc = get("accepted_honest") + get("accepted_byz");
        const double all = acc + get("rejected_lipschitz") + get("rejected_frequency");
        out.push_back(all > 0 ? acc / all : 0.0);
        break;
      }
    }
  }
  return out;
}

}  // namespace

PlotMetric parse_plot_metric(const std::string& name) {
  if (name == "loss") return PlotMetric::kLoss;
  if (name == "grad_norm") return PlotMetric::kGradNorm;
  if (name == "acceptance") return PlotMetric::kAcceptance;
  throw ConfigError("metric: expected loss, grad_norm or acceptance, got '" + name + "'");
}

std::vector<PlotSeries> load_plot_series(const std::vector<std::filesystem::path>& summaries, PlotMetric metric,
                                         std::ostream& warnings) {
  if (summaries.empty()) throw ConfigError("plot-data needs at least one summary");
  std::vector<PlotSeries> series;
  std::map<std::string, int> seen;
  for (const auto& path : summaries) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json summary;
    try {
      summary = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": " + e.what());
    }

    PlotSeries s;
    const std::string experiment = summary.value("experiment", path.parent_path().filename().string());
    const std::string variant = summary.value("variant", "main");
    s.name = variant == "main" ? experiment : experiment + "/" + variant;
    if (const int k = seen[s.name]++; k > 0) s.name += "#" + std::to_string(k + 1);
    s.diverged = summary.value("diverged", false);

    std::vector<std::vector<double>> reps;
    for (const auto& r : summary.at("replicates")) {
      reps.push_back(read_metric(path.parent_path() / r.at("csv").get<std::string>(), metric));
    }
    if (reps.empty()) throw IoError(path.string() + ": no replicates listed");
    std::size_t len = reps.front().size();
    for (const auto& r : reps) len = std::min(len, r.size());
    for (const auto& r : reps) {
      if (r.size() != len) {
        warnings << "warning: " << s.name << ": replicates differ in length, using the first " << len
                 << " epochs\n";
        break;
      }
    }
    s.values.assign(len, 0.0);
    for (const auto& r : reps) {
      for (std::size_t i = 0; i < len; ++i) s.values[i] += r[i];
    }
    for (double& v : s.values) v /= static_cast<double>(reps.size());
    series.push_back(std::move(s));
  }
  return series;
}

std::string plot_data_csv(std::vector<PlotSeries> series, std::ostream& warnings) {
  std::size_t len = series.empty() ? 0 : series.front().values.size();
  for (const auto& s : series) len = std::min(len, s.values.size());
  for (const auto& s : series) {
    if (s.values.size() > len) {
      warnings << "warning: truncating " << s.name << " from " << s.values.size() << " to " << len << " epochs\n";
    }
  }
  std::string out = "series,epoch,value,diverged\r\n";
  for (const auto& s : series) {
    const std::string name = csv_field(s.name);
    for (std::size_t i = 0; i < len; ++i) {
      out += name + "," + std::to_string(i + 1) + "," + format_real(s.values[i]) + "," +
             (s.diverged ? "true" : "false") + "\r\n";
    }
  }
  return out;
}

}  // namespace kardam
