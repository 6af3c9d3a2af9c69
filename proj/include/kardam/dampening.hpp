#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace kardam {

struct DampeningSpec {
  enum class Kind { kConstant, kInverse, kExponential };

  Kind kind = Kind::kInverse;
  double alpha = 1.0;  // exponential only
  double beta = 1.0;   // exponential only
  std::int64_t tau_max = 10000;

  static DampeningSpec constant() { return {Kind::kConstant, 1.0, 1.0, 10000}; }
  static DampeningSpec inverse() { return {Kind::kInverse, 1.0, 1.0, 10000}; }
  static DampeningSpec exponential(double alpha, double beta = 1.0) {
    return {Kind::kExponential, alpha, beta, 10000};
  }

  /// Strictly decreasing with value 1 at zero staleness; false for the constant baseline.
  bool conforming() const { return kind != Kind::kConstant; }
  /// Throws ConfigError on non-positive exponential parameters or tau_max.
  void validate() const;
};

std::string_view to_string(DampeningSpec::Kind kind);

/// Lambda(tau). Negative staleness is a ProtocolError.
double lambda_eval(const DampeningSpec& spec, std::int64_t tau);
/// Lambda evaluated at a real staleness, used by the scans.
double lambda_eval_real(const DampeningSpec& spec, double tau);

/// Real-valued inverse of Lambda; 0 for the constant baseline.
double lambda_inverse(const DampeningSpec& spec, double lambda);

/// sup over tau >= 0 of tau * Lambda(tau), in closed form.
double chi_bound(const DampeningSpec& spec);

/// Numeric sup of tau * Lambda(tau) over [0, tau_max]: a grid scan followed by
/// golden-section refinement around the best grid point.
double chi_scan(const DampeningSpec& spec, double tau_max, double grid_step = 0.01);

struct LearningRateSchedule {
  enum class Mode { kFixedBase, kEq2Base };

  double base_gamma = 0.01;
  Mode mode = Mode::kFixedBase;
  /// When false, mu_t is pinned to 1 and only the per-message lambda weights act.
  bool adaptive = true;
  double mu_max_observed = 0.0;
};

struct RateResult {
  double mu = 1.0;
  double gamma_t = 0.0;
};

/// mu_t = M / sum(lambda), gamma_t = gamma * mu_t; records the running max of mu_t.
RateResult adaptive_rate(LearningRateSchedule& schedule, std::span<const double> lambdas);

/// sum(lambda * |G_lambda|) over the distinct lambda values of the multiset.
double grouped_lambda_sum(std::span<const double> lambdas);

double eq2_base_gamma(double q_x1, double q_opt, double K, std::int64_t T, std::int64_t M, double d_sigma2);

struct EpochLambdas {
  double gamma_t = 0.0;
  std::vector<double> lambdas;  // one entry per gradient applied in the epoch
};

struct PrerequisiteResult {
  bool holds = true;
  std::optional<double> worst_residual;  // min over epochs of RHS - LHS
  std::optional<std::int64_t> worst_epoch;
  std::int64_t horizon = 0;              // truncation point S of the inner sum
};

/// Evaluates the per-epoch convergence prerequisite over a run trace.
PrerequisiteResult prerequisite_check(std::span<const EpochLambdas> epochs, double K, const DampeningSpec& spec);

struct DampeningComparisonRow {
  std::int64_t tau = 0;
  bool lower_ok = false;     // alpha > beta / e
  bool upper_ok = false;     // alpha <= ln(tau + 1) / tau^(1/beta)
  bool faster = false;       // both
  bool chi_inverse_geq = false;  // tau/(1+tau) >= chi of the exponential spec
  double mu_inverse = 0.0;       // 1 / Lambda_1(tau)
  double mu_exponential = 0.0;   // 1 / Lambda_2(tau)
};

struct DampeningComparison {
  std::vector<DampeningComparisonRow> rows;
  /// [first, last] staleness where the exponential spec is faster, when that set is contiguous.
  std::optional<std::pair<std::int64_t, std::int64_t>> admissible_interval;
  /// Staleness from which tau/(1+tau) reaches the exponential chi; absent when alpha <= beta/e.
  std::optional<double> chi_crossover;
};

DampeningComparison dampening_compare(double alpha, double beta, std::int64_t tau_lo, std::int64_t tau_hi);

/// Range of alpha for which the exponential spec is faster at every tau in
/// [tau_lo, tau_hi]: (beta/e, min ln(tau+1)/tau^(1/beta)], absent when empty.
std::optional<std::pair<double, double>> admissible_alpha(double beta, std::int64_t tau_lo, std::int64_t tau_hi);

}  // namespace kardam
