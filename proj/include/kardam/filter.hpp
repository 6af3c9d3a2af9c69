#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kardam/linalg.hpp"
#include "kardam/model.hpp"

namespace kardam {

enum class Reason { kAccepted, kRejectedLipschitz, kRejectedFrequency, kAcceptedWarmup };

std::string_view to_string(Reason reason);

struct FilterVerdict {
  bool accepted = false;
  Reason reason = Reason::kRejectedLipschitz;
  std::optional<double> candidate_k;
  std::optional<double> threshold_k;
};

/// Which per-worker coefficients form the quantile reference.
enum class ReferenceMode {
  /// Each worker's own coefficient |g_p - g_p_prev| / |x_l - x_l_prev| over its
  /// last two accepted gradients.
  kWorkerHistory,
  /// Each worker's most recently delivered gradient, measured against the
  /// current reference gradient and model step exactly like the candidate.
  kLatestDelivered,
};

std::string_view to_string(ReferenceMode mode);

struct FilterOptions {
  ReferenceMode reference = ReferenceMode::kLatestDelivered;
  bool lipschitz = true;
  bool frequency = true;
  bool operator==(const FilterOptions&) const = default;
};

struct LipschitzRecord {
  int worker_id = 0;
  std::optional<Vector> last_grad;
  std::optional<Vector> last_point;  // snapshot the last gradient was computed on (worker-history mode)
  std::optional<std::int64_t> last_model_epoch;
  std::optional<double> k_hat;

  bool operator==(const LipschitzRecord&) const = default;
};

struct FilterState {
  FilterState(int n, int f, FilterOptions options = {});

  int n;
  int f;
  FilterOptions options;
  std::vector<LipschitzRecord> records;
  std::vector<int> window;                 // last min(accepted, 2f) accepted worker ids, oldest first
  std::optional<Vector> last_accepted_grad;  // g_q
  std::int64_t accepted_count = 0;
  std::int64_t updates = 0;  // model updates applied by the server so far

  /// Before the first applied update the Lipschitz stage is bypassed.
  bool in_warmup() const { return updates == 0 || !last_accepted_grad.has_value(); }

  bool operator==(const FilterState&) const = default;
};

/// |g_new - g_old| / |x_new - x_old| with 0/0 = 0 and c/0 = +inf.
double empirical_lipschitz(std::span<const double> g_new, std::span<const double> g_old,
                           std::span<const double> x_new, std::span<const double> x_old);

/// The (n-f)-th smallest of exactly n values (1-based).
double lipschitz_quantile(std::span<const double> values, int n, int f);

/// Lipschitz stage against the current and previous server models. Pure.
FilterVerdict lipschitz_filter(const FilterState& state, const GradientMessage& msg, std::span<const double> x_t,
                               std::span<const double> x_prev);

/// Frequency stage over the window with the candidate appended transiently. Pure.
FilterVerdict frequency_filter(const FilterState& state, int worker_id);

/// The f workers with the most appearances in `window` (ties to lower id).
std::vector<int> frequency_theta(std::span<const int> window, int n, int f);

/// Lipschitz then frequency; mutates `state` only when both accept. `x_eval`
/// is the snapshot the candidate was computed on.
FilterVerdict filter_pipeline(FilterState& state, const GradientMessage& msg, std::span<const double> x_eval,
                              std::span<const double> x_t, std::span<const double> x_prev);

/// Dry run of filter_pipeline, no mutation.
FilterVerdict filter_check(const FilterState& state, const GradientMessage& msg, std::span<const double> x_t,
                           std::span<const double> x_prev);

/// Records an accepted gradient: window, g_q and (in worker-history mode) the sender's record.
void filter_commit(FilterState& state, const GradientMessage& msg, std::span<const double> x_eval);

/// Tells the filter that the server applied a model update.
void filter_note_update(FilterState& state);

/// Called by the server for every delivered message after the verdict. In
/// latest-delivered mode this refreshes the sender's reference gradient; it is
/// a no-op in worker-history mode.
void filter_observe(FilterState& state, const GradientMessage& msg, const FilterVerdict& verdict);

/// accepted_honest / total_delivered, absent for an empty run.
std::optional<double> slowdown(std::int64_t accepted_honest, std::int64_t total_delivered);

/// Number of length-(2f+1) windows of the accepted sequence holding fewer than
/// f+1 honest gradients.
std::int64_t lemma1_violations(std::span<const std::uint8_t> accepted_is_honest, int f);

/// Longest run of consecutive acceptances from one worker.
std::int64_t longest_same_worker_run(std::span<const int> accepted_workers);

}  // namespace kardam
