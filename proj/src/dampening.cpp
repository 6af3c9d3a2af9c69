#include "kardam/dampening.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kardam/errors.hpp"

namespace kardam {
namespace {

constexpr double kE = std::numbers::e;

struct Group {
  double lambda;
  std::int64_t count;
};

std::vector<Group> group_lambdas(std::span<const double> lambdas) {
  std::vector<double> sorted(lambdas.begin(), lambdas.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Group> groups;
  for (double l : sorted) {
    if (!groups.empty() && groups.back().lambda == l) {
      ++groups.back().count;
    } else {
      groups.push_back({l, 1});
    }
  }
  return groups;
}

// Inverse staleness with values that are integers up to rounding snapped onto them,
// so the indicator s <= Lambda^-1(nu) is not lost to round-off.
double snapped_inverse(const DampeningSpec& spec, double lambda) {
  const double inv = lambda_inverse(spec, lambda);
  const double r = std::round(inv);
  return std::abs(inv - r) <= 1e-9 * std::max(1.0, r) ? r : inv;
}

}  // namespace

void DampeningSpec::validate() const {
  if (kind == Kind::kExponential && !(alpha > 0.0 && beta > 0.0 && std::isfinite(alpha) && std::isfinite(beta))) {
    throw ConfigError("dampening: exponential alpha and beta must be positive and finite");
  }
  if (tau_max < 1) throw ConfigError("dampening: tau_max must be at least 1");
}

std::string_view to_string(DampeningSpec::Kind kind) {
  switch (kind) {
    case DampeningSpec::Kind::kConstant:
      return "constant";
    case DampeningSpec::Kind::kInverse:
      return "inverse";
    case DampeningSpec::Kind::kExponential:
      return "exponential";
  }
  return "unknown";
}

double lambda_eval_real(const DampeningSpec& spec, double tau) {
  if (!(tau >= 0.0)) throw ProtocolError("lambda_eval: staleness must be nonnegative");
  switch (spec.kind) {
    case DampeningSpec::Kind::kConstant:
      return 1.0;
    case DampeningSpec::Kind::kInverse:
      return 1.0 / (1.0 + tau);
    case DampeningSpec::Kind::kExponential:
      return std::exp(-spec.alpha * (spec.beta == 1.0 ? tau : std::pow(tau, 1.0 / spec.beta)));
  }
  return 1.0;
}

double lambda_eval(const DampeningSpec& spec, std::int64_t tau) {
  if (tau < 0) throw ProtocolError("lambda_eval: negative staleness " + std::to_string(tau));
  return lambda_eval_real(spec, static_cast<double>(tau));
}

double lambda_inverse(const DampeningSpec& spec, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ProtocolError("lambda_inverse: lambda must lie in (0, 1]");
  switch (spec.kind) {
    case DampeningSpec::Kind::kConstant:
      return 0.0;
    case DampeningSpec::Kind::kInverse:
      return 1.0 / lambda - 1.0;
    case DampeningSpec::Kind::kExponential:
      return std::pow(-std::log(lambda) / spec.alpha, spec.beta);
  }
  return 0.0;
}

double chi_bound(const DampeningSpec& spec) {
  switch (spec.kind) {
    case DampeningSpec::Kind::kConstant:
      return std::numeric_limits<double>::infinity();
    case DampeningSpec::Kind::kInverse:
      return 1.0;
    case DampeningSpec::Kind::kExponential:
      return std::pow(spec.beta / (kE * spec.alpha), spec.beta);
  }
  return 0.0;
}

double chi_scan(const DampeningSpec& spec, double tau_max, double grid_step) {
  if (!(tau_max > 0.0) || !(grid_step > 0.0)) throw ConfigError("chi_scan: tau_max and grid_step must be positive");
  auto h = [&](double tau) { return tau * lambda_eval_real(spec, tau); };
  const auto steps = static_cast<std::int64_t>(std::ceil(tau_max / grid_step));
  double best_tau = 0.0;
  double best = 0.0;
  for (std::int64_t i = 0; i <= steps; ++i) {
    const double tau = std::min(tau_max, static_cast<double>(i) * grid_step);
    const double v = h(tau);
    if (v > best) {
      best = v;
      best_tau = tau;
    }
  }
  // tau * Lambda(tau) is unimodal for every supported kind, so golden section
  // on the bracketing grid cell pair converges to the true maximum.
  double lo = std::max(0.0, best_tau - grid_step);
  double hi = std::min(tau_max, best_tau + grid_step);
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - invphi * (hi - lo);
  double d = lo + invphi * (hi - lo);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
    if (h(c) > h(d)) {
      hi = d;
    } else {
      lo = c;
    }
    c = hi - invphi * (hi - lo);
    d = lo + invphi * (hi - lo);
  }
  return std::max(best, h(0.5 * (lo + hi)));
}

double grouped_lambda_sum(std::span<const double> lambdas) {
  double total = 0.0;
  for (const Group& g : group_lambdas(lambdas)) total += g.lambda * static_cast<double>(g.count);
  return total;
}

RateResult adaptive_rate(LearningRateSchedule& schedule, std::span<const double> lambdas) {
  if (lambdas.empty()) throw ProtocolError("adaptive_rate: no lambda values for this epoch");
  for (double l : lambdas) {
    if (!(l > 0.0 && l <= 1.0)) throw ProtocolError("adaptive_rate: lambda values must lie in (0, 1]");
  }
  RateResult r;
  r.mu = schedule.adaptive ? static_cast<double>(lambdas.size()) / grouped_lambda_sum(lambdas) : 1.0;
  r.gamma_t = schedule.base_gamma * r.mu;
  schedule.mu_max_observed = std::max(schedule.mu_max_observed, r.mu);
  return r;
}

double eq2_base_gamma(double q_x1, double q_opt, double K, std::int64_t T, std::int64_t M, double d_sigma2) {
  if (!(K > 0.0) || T <= 0 || M <= 0 || !(d_sigma2 > 0.0)) {
    throw ConfigError("eq2_base_gamma: K, T, M and d_sigma2 must be positive");
  }
  const double radicand =
      (q_x1 - q_opt) / (K * static_cast<double>(T) * static_cast<double>(M) * d_sigma2);
  if (!(radicand > 0.0) || !std::isfinite(radicand)) {
    throw ConfigError("eq2_base_gamma: nonpositive radicand (Q(x1) - Q(x*) = " + std::to_string(q_x1 - q_opt) +
                      ")");
  }
  return std::sqrt(radicand);
}

PrerequisiteResult prerequisite_check(std::span<const EpochLambdas> epochs, double K, const DampeningSpec& spec) {
  PrerequisiteResult result;
  if (epochs.empty()) return result;

  std::vector<std::vector<Group>> groups;
  std::vector<std::vector<double>> inverses;
  groups.reserve(epochs.size());
  double min_lambda = 1.0;
  for (const EpochLambdas& e : epochs) {
    groups.push_back(group_lambdas(e.lambdas));
    std::vector<double> inv;
    for (const Group& g : groups.back()) {
      inv.push_back(snapped_inverse(spec, g.lambda));
      min_lambda = std::min(min_lambda, g.lambda);
    }
    inverses.push_back(std::move(inv));
  }
  result.horizon = static_cast<std::int64_t>(std::ceil(snapped_inverse(spec, min_lambda)));

  const std::size_t T = epochs.size();
  for (std::size_t t = 0; t < T; ++t) {
    const auto& gt = groups[t];
    if (gt.empty()) continue;
    const double gamma_t = epochs[t].gamma_t;
    double inner = 0.0;
    for (std::int64_t s = 1; s <= result.horizon && t + static_cast<std::size_t>(s) < T; ++s) {
      const std::size_t u = t + static_cast<std::size_t>(s);
      for (std::size_t k = 0; k < groups[u].size(); ++k) {
        const double inv = inverses[u][k];
        if (static_cast<double>(s) > inv) continue;
        const Group& nu = groups[u][k];
        inner += epochs[u].gamma_t * K * K * nu.lambda * static_cast<double>(nu.count) * inv;
      }
    }
    const double card = static_cast<double>(gt.size());
    double lhs = 0.0;
    double rhs = 0.0;
    for (const Group& g : gt) {
      lhs += g.lambda * g.lambda * card * (K * gamma_t * gamma_t + inner * gamma_t * gamma_t);
      rhs += gamma_t * g.lambda / static_cast<double>(g.count);
    }
    const double residual = rhs - lhs;
    if (!result.worst_residual || residual < *result.worst_residual) {
      result.worst_residual = residual;
      result.worst_epoch = static_cast<std::int64_t>(t);
    }
  }
  result.holds = !result.worst_residual || *result.worst_residual >= 0.0;
  return result;
}

DampeningComparison dampening_compare(double alpha, double beta, std::int64_t tau_lo, std::int64_t tau_hi) {
  if (!(alpha > 0.0 && beta > 0.0)) throw ConfigError("dampening_compare: alpha and beta must be positive");
  if (tau_lo < 1 || tau_hi < tau_lo) throw ConfigError("dampening_compare: need 1 <= tau_lo <= tau_hi");
  const DampeningSpec inv = DampeningSpec::inverse();
  const DampeningSpec ex = DampeningSpec::exponential(alpha, beta);
  const double chi_exp = chi_bound(ex);
  const bool lower_ok = alpha > beta / kE;

  DampeningComparison out;
  std::optional<std::int64_t> first;
  std::optional<std::int64_t> last;
  bool contiguous = true;
  for (std::int64_t tau = tau_lo; tau <= tau_hi; ++tau) {
    const double t = static_cast<double>(tau);
    DampeningComparisonRow row;
    row.tau = tau;
    row.lower_ok = lower_ok;
    row.upper_ok = alpha <= std::log(t + 1.0) / std::pow(t, 1.0 / beta);
    row.faster = row.lower_ok && row.upper_ok;
    row.chi_inverse_geq = t / (1.0 + t) >= chi_exp;
    row.mu_inverse = 1.0 / lambda_eval(inv, tau);
    row.mu_exponential = 1.0 / lambda_eval(ex, tau);
    if (row.faster) {
      if (last && *last != tau - 1) contiguous = false;
      if (!first) first = tau;
      last = tau;
    }
    out.rows.push_back(row);
  }
  if (first && contiguous) out.admissible_interval = std::make_pair(*first, *last);
  if (lower_ok) out.chi_crossover = 1.0 / (std::pow(kE * alpha / beta, beta) - 1.0);
  return out;
}

std::optional<std::pair<double, double>> admissible_alpha(double beta, std::int64_t tau_lo, std::int64_t tau_hi) {
  if (!(beta > 0.0)) throw ConfigError("admissible_alpha: beta must be positive");
  if (tau_lo < 1 || tau_hi < tau_lo) throw ConfigError("admissible_alpha: need 1 <= tau_lo <= tau_hi");
  double upper = std::numeric_limits<double>::infinity();
  for (std::int64_t tau = tau_lo; tau <= tau_hi; ++tau) {
    const double t = static_cast<double>(tau);
    upper = std::min(upper, std::log(t + 1.0) / std::pow(t, 1.0 / beta));
  }
  const double lower = beta / kE;
  if (!(upper > lower)) return std::nullopt;
  return std::make_pair(lower, upper);
}

}  // namespace kardam
