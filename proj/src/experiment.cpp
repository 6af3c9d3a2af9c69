#include "kardam/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "kardam/errors.hpp"

namespace kardam {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json optional_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

// JSON has no infinity or NaN; those become null.
json real_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

struct Stats {
  std::int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  s.count = static_cast<std::int64_t>(xs.size());
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

std::vector<ReplicateResult> run_replicates(const SimulationConfig& config, std::int64_t replicates, int parallel) {
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  std::vector<ReplicateResult> results(static_cast<std::size_t>(replicates));
  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::int64_t k = next.fetch_add(1);
      if (k >= replicates) return;
      try {
        SimulationConfig c = config;
        c.seed = config.seed + static_cast<std::uint64_t>(k);
        results[static_cast<std::size_t>(k)] = ReplicateResult{k, c.seed, run_simulation(c)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int threads = static_cast<int>(std::clamp<std::int64_t>(parallel, 1, replicates));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string epochs_csv(const RunTrace& trace) {
  std::string out =
      "epoch,loss,grad_norm,gamma_t,mu_t,accepted_honest,accepted_byz,rejected_lipschitz,rejected_frequency\r\n";
  for (const EpochRecord& r : trace.epochs) {
    out += std::to_string(r.epoch);
    for (double v : {r.loss, r.grad_norm, r.gamma_t, r.mu_t}) {
      out += ',';
      out += format_real(v);
    }
    for (std::int64_t v : {r.accepted_honest, r.accepted_byz, r.rejected_lipschitz, r.rejected_frequency}) {
      out += ',';
      out += std::to_string(v);
    }
    out += "\r\n";
  }
  return out;
}

json replicate_json(const ReplicateResult& r) {
  const RunSummary& s = r.trace.summary;
  json j;
  j["replicate"] = r.index;
  j["seed"] = r.seed;
  j["csv"] = "replicate_" + std::to_string(r.index) + ".csv";
  j["epochs"] = s.epochs;
  j["delivered"] = s.delivered;
  j["delivered_honest"] = s.delivered_honest;
  j["accepted"] = s.accepted;
  j["accepted_honest"] = s.accepted_honest;
  j["accepted_warmup"] = s.accepted_warmup;
  j["rejected_lipschitz"] = s.rejected_lipschitz;
  j["rejected_frequency"] = s.rejected_frequency;
  j["trailing_deliveries"] = s.trailing_deliveries;
  j["honest_passed_lipschitz"] = s.honest_passed_lipschitz;
  j["byz_accepted"] = s.byz_accepted;
  j["byz_accepted_after_2n_deliveries"] = s.byz_accepted_after_2n;
  j["byz_accepted_after_warmup_epochs"] = s.byz_accepted_after_tr;
  j["SL"] = optional_json(s.SL);
  j["drop_ratio"] = optional_json(s.drop_ratio);
  j["honest_acceptance"] = optional_json(s.honest_acceptance);
  j["epochs_to_target"] = optional_json(s.epochs_to_target);
  j["epochs_to_target_loss"] = optional_json(s.epochs_to_target_loss);
  j["initial_loss"] = real_json(s.initial_loss);
  j["final_loss"] = real_json(s.final_loss);
  j["final_grad_norm"] = real_json(s.final_grad_norm);
  j["mu_max"] = real_json(s.mu_max);
  j["base_gamma"] = real_json(s.base_gamma);
  j["chi"] = real_json(s.chi);
  j["diverged"] = s.diverged;
  j["numeric_fault"] = s.numeric_fault;
  j["stalled"] = s.stalled;
  j["stop_reason"] = s.stop_reason;
  j["lemma1_violations"] = s.lemma1_violations;
  j["longest_same_worker_run"] = s.longest_same_worker_run;
  j["longest_honest_drought"] = s.longest_honest_drought;
  j["prerequisite"] = {{"holds", s.prerequisite.holds},
                       {"worst_residual", s.prerequisite.worst_residual ? real_json(*s.prerequisite.worst_residual)
                                                                        : json(nullptr)},
                       {"worst_epoch", optional_json(s.prerequisite.worst_epoch)},
                       {"horizon", s.prerequisite.horizon},
                       {"K", real_json(s.prerequisite_K)}};
  return j;
}

json summarize(const std::string& experiment, const ExperimentVariant& variant,
               const std::vector<ReplicateResult>& results) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["experiment"] = experiment;
  j["variant"] = variant.name;
  j["config"] = variant.config;

  json reps = json::array();
  bool diverged = false;
  bool fault = false;
  bool prerequisite = true;
  std::int64_t byz = 0;
  double mu_max = 0.0;
  for (const ReplicateResult& r : results) {
    reps.push_back(replicate_json(r));
    diverged = diverged || r.trace.summary.diverged;
    fault = fault || r.trace.summary.numeric_fault;
    prerequisite = prerequisite && r.trace.summary.prerequisite.holds;
    byz += r.trace.summary.byz_accepted;
    mu_max = std::max(mu_max, r.trace.summary.mu_max);
  }
  j["replicates"] = reps;

  // Mean and sample standard deviation of every numeric replicate field.
  json agg = json::object();
  for (const auto& [key, value] : reps.front().items()) {
    if (!value.is_number() || key == "replicate" || key == "seed") continue;
    std::vector<double> xs;
    for (const json& r : reps) {
      if (r.at(key).is_number()) xs.push_back(r.at(key).get<double>());
    }
    const Stats s = stats(xs);
    agg[key] = {{"mean", s.mean}, {"stddev", s.stddev}, {"count", s.count}};
  }
  for (const char* key : {"epochs_to_target", "epochs_to_target_loss", "SL", "drop_ratio", "honest_acceptance"}) {
    if (agg.contains(key)) continue;
    std::vector<double> xs;
    for (const json& r : reps) {
      if (r.at(key).is_number()) xs.push_back(r.at(key).get<double>());
    }
    const Stats s = stats(xs);
    agg[key] = {{"mean", s.count ? json(s.mean) : json(nullptr)}, {"stddev", s.count ? json(s.stddev) : json(nullptr)},
                {"count", s.count}};
  }
  j["aggregate"] = agg;

  j["SL"] = agg["SL"]["mean"];
  j["drop_ratio"] = agg["drop_ratio"]["mean"];
  j["byz_accepted"] = byz;
  j["diverged"] = diverged;
  j["numeric_fault"] = fault;
  j["prerequisite_holds"] = prerequisite;
  const double chi = chi_bound(variant.simulation.dampening);
  j["chi"] = real_json(chi);
  j["chi_infinite"] = std::isinf(chi);
  j["mu_max"] = mu_max;
  return j;
}

ExperimentOutcome run_experiment(ExperimentConfig config, const RunOptions& options) {
  namespace fs = std::filesystem;
  ExperimentOutcome outcome;
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  json index = json::array();
  for (ExperimentVariant& v : config.variants) {
    if (options.replicates) {
      v.replicates = *options.replicates;
      v.config["replicates"] = *options.replicates;
    }
    const std::vector<ReplicateResult> results = run_replicates(v.simulation, v.replicates, options.parallel);
    const fs::path dir = config.has_variants ? options.out_dir / v.name : options.out_dir;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const ReplicateResult& r : results) {
      write_file(dir / ("replicate_" + std::to_string(r.index) + ".csv"), epochs_csv(r.trace));
      outcome.numeric_fault = outcome.numeric_fault || r.trace.summary.numeric_fault;
    }
    const json summary = summarize(config.name, v, results);
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    outcome.summaries.push_back(dir / "summary.json");
    index.push_back({{"variant", v.name}, {"summary", config.has_variants ? v.name + "/summary.json" : "summary.json"}});
  }
  if (config.has_variants) {
    json idx = {{"schema_version", kSchemaVersion}, {"experiment", config.name}, {"variants", index}};
    write_file(options.out_dir / "index.json", idx.dump(2) + "\n");
  }
  return outcome;
}

}  // namespace kardam
