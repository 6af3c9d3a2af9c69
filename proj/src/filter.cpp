#include "kardam/filter.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "kardam/errors.hpp"

namespace kardam {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double ratio(double num, double den) {
  if (den == 0.0) return num > 0.0 ? kInf : 0.0;
  return num / den;
}

void require_worker(const FilterState& state, int worker_id) {
  if (worker_id < 0 || worker_id >= state.n) {
    throw ConfigError("filter: worker id " + std::to_string(worker_id) + " outside [0, n)");
  }
}

FilterVerdict pass_through(Reason reason) { return FilterVerdict{true, reason, std::nullopt, std::nullopt}; }

}  // namespace

std::string_view to_string(Reason reason) {
  switch (reason) {
    case Reason::kAccepted:
      return "accepted";
    case Reason::kRejectedLipschitz:
      return "rejected_lipschitz";
    case Reason::kRejectedFrequency:
      return "rejected_frequency";
    case Reason::kAcceptedWarmup:
      return "accepted_warmup";
  }
  return "unknown";
}

std::string_view to_string(ReferenceMode mode) {
  return mode == ReferenceMode::kWorkerHistory ? "worker_history" : "latest_delivered";
}

FilterState::FilterState(int n_workers, int f_byz, FilterOptions opts) : n(n_workers), f(f_byz), options(opts) {
  if (n < 1) throw ConfigError("filter: n must be positive");
  if (f < 0) throw ConfigError("filter: f must be nonnegative");
  if (n < 2 * f + 1) throw ConfigError("filter: n must be at least 2f+1 for the frequency window");
  records.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) records[static_cast<std::size_t>(i)].worker_id = i;
  window.reserve(static_cast<std::size_t>(2 * f + 1));
}

double empirical_lipschitz(std::span<const double> g_new, std::span<const double> g_old,
                           std::span<const double> x_new, std::span<const double> x_old) {
  require_same_dim(g_new, g_old, "empirical_lipschitz");
  require_same_dim(x_new, x_old, "empirical_lipschitz");
  require_same_dim(g_new, x_new, "empirical_lipschitz");
  return ratio(distance(g_new, g_old), distance(x_new, x_old));
}

double lipschitz_quantile(std::span<const double> values, int n, int f) {
  if (n < 1 || f < 0 || f >= n) throw ConfigError("lipschitz_quantile: need 0 <= f < n");
  if (values.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("lipschitz_quantile: expected " + std::to_string(n) + " values, got " +
                      std::to_string(values.size()));
  }
  std::vector<double> v(values.begin(), values.end());
  const auto k = static_cast<std::ptrdiff_t>(n - f - 1);
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[static_cast<std::size_t>(k)];
}

FilterVerdict lipschitz_filter(const FilterState& state, const GradientMessage& msg, std::span<const double> x_t, std::span<const double> x_prev) {
  require_worker(state, msg.worker_id);
  require_same_dim(msg.grad, x_t, "lipschitz_filter");
  if (!state.options.lipschitz || state.in_warmup()) return pass_through(Reason::kAcceptedWarmup);
  require_same_dim(x_t, x_prev, "lipschitz_filter");

  const Vector& g_q = *state.last_accepted_grad;
  const double step = distance(x_t, x_prev);
  const double candidate = ratio(distance(msg.grad, g_q), step);

  std::vector<double> values(static_cast<std::size_t>(state.n), -1.0);
  double max_present = -1.0;
  for (int p = 0; p < state.n; ++p) {
    const LipschitzRecord& rec = state.records[static_cast<std::size_t>(p)];
    double v = -1.0;
    if (state.options.reference == ReferenceMode::kWorkerHistory) {
      if (rec.k_hat) v = *rec.k_hat;
    } else if (p == msg.worker_id) {
      v = candidate;
    } else if (rec.last_grad) {
      v = ratio(distance(*rec.last_grad, g_q), step);
    }
    values[static_cast<std::size_t>(p)] = v;
    max_present = std::max(max_present, v);
  }
  // Nothing to compare against yet: the reference set is still warming up.
  if (max_present < 0.0) return pass_through(Reason::kAcceptedWarmup);
  for (double& v : values) {
    if (v < 0.0) v = max_present;
  }
  const double threshold = lipschitz_quantile(values, state.n, state.f);
  const bool ok = candidate <= threshold;
  return FilterVerdict{ok, ok ? Reason::kAccepted : Reason::kRejectedLipschitz, candidate, threshold};
}

std::vector<int> frequency_theta(std::span<const int> window, int n, int f) {
  std::vector<std::pair<int, int>> counts;  // (-count, id) so ascending order = most frequent, lowest id
  counts.reserve(window.size());
  for (int w : window) {
    if (w < 0 || w >= n) throw ConfigError("frequency_theta: worker id outside [0, n)");
    auto it = std::find_if(counts.begin(), counts.end(), [w](const auto& c) { return c.second == w; });
    if (it == counts.end()) {
      counts.emplace_back(-1, w);
    } else {
      --it->first;
    }
  }
  std::sort(counts.begin(), counts.end());
  std::vector<int> theta;
  for (std::size_t i = 0; i < counts.size() && static_cast<int>(i) < f; ++i) theta.push_back(counts[i].second);
  return theta;
}

FilterVerdict frequency_filter(const FilterState& state, int worker_id) {
  require_worker(state, worker_id);
  if (!state.options.frequency) return pass_through(Reason::kAccepted);
  // At most 2f+1 entries, so the counting below stays within O(fn).
  std::vector<int> transient(state.window);
  transient.push_back(worker_id);
  int top_sum = 0;
  for (int id : frequency_theta(transient, state.n, state.f)) {
    top_sum += static_cast<int>(std::count(transient.begin(), transient.end(), id));
  }
  bool ok = top_sum <= state.f;
  // While the window is still filling, the inequality alone admits repeats
  // (e.g. [a, a] + a for f = 3) that leave no admissible candidate once the
  // window holds f entries. Keeping the stored window duplicate-free avoids
  // that lockout and never accepts anything the inequality would reject.
  if (ok && state.window.size() < static_cast<std::size_t>(2 * state.f) &&
      std::find(state.window.begin(), state.window.end(), worker_id) != state.window.end()) {
    ok = false;
  }
  return FilterVerdict{ok, ok ? Reason::kAccepted : Reason::kRejectedFrequency, std::nullopt, std::nullopt};
}

FilterVerdict filter_check(const FilterState& state, const GradientMessage& msg, std::span<const double> x_t,
                           std::span<const double> x_prev) {
  FilterVerdict lip = lipschitz_filter(state, msg, x_t, x_prev);
  if (!lip.accepted) return lip;
  const FilterVerdict freq = frequency_filter(state, msg.worker_id);
  if (!freq.accepted) {
    lip.accepted = false;
    lip.reason = Reason::kRejectedFrequency;
  }
  return lip;
}

FilterVerdict filter_pipeline(FilterState& state, const GradientMessage& msg, std::span<const double> x_eval,
                              std::span<const double> x_t, std::span<const double> x_prev) {
  FilterVerdict verdict = filter_check(state, msg, x_t, x_prev);
  if (verdict.accepted) filter_commit(state, msg, x_eval);
  return verdict;
}

void filter_commit(FilterState& state, const GradientMessage& msg, std::span<const double> x_eval) {
  require_worker(state, msg.worker_id);
  if (state.options.reference == ReferenceMode::kWorkerHistory) {
    LipschitzRecord& rec = state.records[static_cast<std::size_t>(msg.worker_id)];
    if (rec.last_grad && rec.last_point) {
      rec.k_hat = empirical_lipschitz(msg.grad, *rec.last_grad, x_eval, *rec.last_point);
    }
    rec.last_grad = msg.grad;
    rec.last_point = Vector(x_eval.begin(), x_eval.end());
    rec.last_model_epoch = msg.timestamp;
  }
  state.window.push_back(msg.worker_id);
  if (state.window.size() > static_cast<std::size_t>(2 * state.f)) state.window.erase(state.window.begin());
  state.last_accepted_grad = msg.grad;
  ++state.accepted_count;
}

void filter_note_update(FilterState& state) { ++state.updates; }

void filter_observe(FilterState& state, const GradientMessage& msg, const FilterVerdict& verdict) {
  require_worker(state, msg.worker_id);
  if (state.options.reference != ReferenceMode::kLatestDelivered) return;
  LipschitzRecord& rec = state.records[static_cast<std::size_t>(msg.worker_id)];
  rec.last_grad = msg.grad;
  rec.last_model_epoch = msg.timestamp;
  if (verdict.candidate_k) rec.k_hat = verdict.candidate_k;
}

std::optional<double> slowdown(std::int64_t accepted_honest, std::int64_t total_delivered) {
  if (total_delivered <= 0) return std::nullopt;
  return static_cast<double>(accepted_honest) / static_cast<double>(total_delivered);
}

std::int64_t lemma1_violations(std::span<const std::uint8_t> accepted_is_honest, int f) {
  const std::size_t w = static_cast<std::size_t>(2 * f + 1);
  if (accepted_is_honest.size() < w) return 0;
  std::int64_t honest = 0;
  std::int64_t violations = 0;
  for (std::size_t i = 0; i < accepted_is_honest.size(); ++i) {
    honest += accepted_is_honest[i] ? 1 : 0;
    if (i >= w) honest -= accepted_is_honest[i - w] ? 1 : 0;
    if (i + 1 >= w && honest < f + 1) ++violations;
  }
  return violations;
}

std::int64_t longest_same_worker_run(std::span<const int> accepted_workers) {
  std::int64_t best = 0;
  std::int64_t run = 0;
  for (std::size_t i = 0; i < accepted_workers.size(); ++i) {
    run = (i > 0 && accepted_workers[i] == accepted_workers[i - 1]) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace kardam
