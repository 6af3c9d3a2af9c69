#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "kardam/dampening.hpp"
#include "kardam/errors.hpp"
#include "kardam/rng.hpp"

using namespace kardam;

namespace {

const double kE = std::numbers::e;

// Direct evaluation of the prerequisite for every epoch, used as an oracle for
// prerequisite_check. Groups are rebuilt with a map; the infinite sum runs to
// the end of the trace and relies on the indicator alone to cut it off.
double oracle_worst_residual(const std::vector<EpochLambdas>& epochs, double K, const DampeningSpec& spec) {
  auto inv = [&](double lam) { return std::round(lambda_inverse(spec, lam)); };
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < epochs.size(); ++t) {
    std::map<double, int> g;
    for (double l : epochs[t].lambdas) ++g[l];
    const double gt = epochs[t].gamma_t;
    double inner = 0.0;
    for (std::size_t u = t + 1; u < epochs.size(); ++u) {
      const double s = static_cast<double>(u - t);
      std::map<double, int> h;
      for (double l : epochs[u].lambdas) ++h[l];
      for (const auto& [nu, count] : h) {
        if (s <= inv(nu)) inner += epochs[u].gamma_t * K * K * nu * count * inv(nu);
      }
    }
    double lhs = 0.0, rhs = 0.0;
    for (const auto& [lam, count] : g) {
      lhs += lam * lam * static_cast<double>(g.size()) * (K * gt * gt + inner * gt * gt);
      rhs += gt * lam / count;
    }
    worst = std::min(worst, rhs - lhs);
  }
  return worst;
}

}  // namespace

TEST_SUITE("dampening") {

TEST_CASE("dampening values") {
  for (const auto& spec : {DampeningSpec::inverse(), DampeningSpec::exponential(0.5), DampeningSpec::exponential(0.3, 2.5)}) {
    CHECK(lambda_eval(spec, 0) == 1.0);
  }
  CHECK(lambda_eval(DampeningSpec::inverse(), 3) == 0.25);
  CHECK(lambda_eval(DampeningSpec::exponential(0.2, 1.0), 5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(lambda_eval(DampeningSpec::constant(), 1000) == 1.0);
  CHECK_THROWS_AS(lambda_eval(DampeningSpec::inverse(), -1), ProtocolError);
  CHECK_FALSE(DampeningSpec::constant().conforming());
  CHECK_THROWS_AS(DampeningSpec::exponential(-1.0).validate(), ConfigError);
}

TEST_CASE("conforming specs are strictly decreasing in (0, 1] and invertible") {
  const DampeningSpec specs[] = {DampeningSpec::inverse(), DampeningSpec::exponential(0.5, 1.0),
                                 DampeningSpec::exponential(0.2, 1.0), DampeningSpec::exponential(0.685, 1.85)};
  for (const auto& spec : specs) {
    double prev = lambda_eval(spec, 0);
    for (std::int64_t tau = 1; tau <= 200; ++tau) {
      const double v = lambda_eval(spec, tau);
      REQUIRE(v < prev);
      REQUIRE(v > 0.0);
      REQUIRE(std::llround(lambda_inverse(spec, v)) == tau);
      prev = v;
    }
  }
}

TEST_CASE("chi closed forms") {
  CHECK(chi_bound(DampeningSpec::exponential(0.5, 1)) == doctest::Approx(2.0 / kE).epsilon(1e-12));
  CHECK(chi_bound(DampeningSpec::exponential(0.2, 1)) == doctest::Approx(5.0 / kE).epsilon(1e-12));
  CHECK(chi_bound(DampeningSpec::inverse()) == 1.0);
  CHECK(std::isinf(chi_bound(DampeningSpec::constant())));
  CHECK(chi_scan(DampeningSpec::inverse(), 1e4) == doctest::Approx(1e4 / (1e4 + 1)).epsilon(1e-12));
}

TEST_CASE("chi scan agrees with the closed form when the maximiser is in range") {
  for (double a : {0.1, 0.2, 0.5, 1.0}) {
    for (double b : {1.0, 2.0, 3.0}) {
      const DampeningSpec spec = DampeningSpec::exponential(a, b);
      const double scan = chi_scan(spec, 1e4);
      const double bound = chi_bound(spec);
      CAPTURE(a);
      CAPTURE(b);
      CHECK(scan <= bound * (1 + 1e-12));
      if (std::pow(b / a, b) <= 1e4) CHECK(std::abs(scan - bound) <= 1e-6);
    }
  }
}

TEST_CASE("inverse scan approaches its supremum monotonically") {
  double prev = 0.0;
  for (double hi : {10.0, 100.0, 1000.0, 10000.0}) {
    const double v = chi_scan(DampeningSpec::inverse(), hi);
    CHECK(v > prev);
    CHECK(v < 1.0);
    prev = v;
  }
}

TEST_CASE("adaptive rate") {
  LearningRateSchedule lr{0.1};
  const std::vector<double> a{1, 0.5, 0.5};
  RateResult r = adaptive_rate(lr, a);
  CHECK(r.mu == 1.5);
  CHECK(r.gamma_t == doctest::Approx(0.15).epsilon(1e-15));
  r = adaptive_rate(lr, std::vector<double>{1, 1});
  CHECK(r.mu == 1.0);
  CHECK(r.gamma_t == 0.1);
  r = adaptive_rate(lr, std::vector<double>{0.25});
  CHECK(r.mu == 4.0);
  CHECK(lr.mu_max_observed == 4.0);
  CHECK_THROWS_AS(adaptive_rate(lr, std::vector<double>{}), ProtocolError);
  CHECK_THROWS_AS(adaptive_rate(lr, std::vector<double>{1.5}), ProtocolError);

  LearningRateSchedule fixed{0.1, LearningRateSchedule::Mode::kFixedBase, false};
  CHECK(adaptive_rate(fixed, std::vector<double>{0.25}).mu == 1.0);
}

TEST_CASE("adaptive rate properties on random multisets") {
  Rng rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t M = 1 + rng.index(8);
    std::vector<double> lam(M);
    for (double& l : lam) {
      // draw from a small set so that groups actually form
      l = lambda_eval(DampeningSpec::inverse(), static_cast<std::int64_t>(rng.index(4)));
    }
    LearningRateSchedule lr{0.01};
    const double mu = adaptive_rate(lr, lam).mu;
    REQUIRE(mu >= 1.0);
    const bool fresh = std::all_of(lam.begin(), lam.end(), [](double l) { return l == 1.0; });
    REQUIRE((mu == 1.0) == fresh);

    double flat = 0.0;
    for (double l : lam) flat += l;
    REQUIRE(grouped_lambda_sum(lam) == doctest::Approx(flat).epsilon(1e-14));

    std::vector<double> shuffled = lam;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
    LearningRateSchedule lr2{0.01};
    REQUIRE(adaptive_rate(lr2, shuffled).mu == mu);
  }
}

TEST_CASE("base rate from the convergence bound") {
  CHECK(eq2_base_gamma(1.0, 0.0, 1.0, 100, 1, 0.01) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(eq2_base_gamma(1.0, 1.0, 1.0, 100, 1, 0.01), ConfigError);
  CHECK(eq2_base_gamma(4.0, 0.0, 2.0, 10, 2, 0.5) == doctest::Approx(std::sqrt(4.0 / 20.0)).epsilon(1e-15));
}

TEST_CASE("prerequisite check") {
  const DampeningSpec inv = DampeningSpec::inverse();
  std::vector<EpochLambdas> fresh(50, EpochLambdas{0.01, {1.0}});
  PrerequisiteResult r = prerequisite_check(fresh, 1.0, inv);
  CHECK(r.holds);
  CHECK(*r.worst_residual > 0.0);

  std::vector<EpochLambdas> wild(50, EpochLambdas{1e3, {1.0}});
  r = prerequisite_check(wild, 1.0, inv);
  CHECK_FALSE(r.holds);
  CHECK(*r.worst_residual < 0.0);

  r = prerequisite_check({}, 1.0, inv);
  CHECK(r.holds);
  CHECK_FALSE(r.worst_residual.has_value());
}

TEST_CASE("prerequisite check matches a direct evaluation on random traces") {
  Rng rng(404);
  const DampeningSpec specs[] = {DampeningSpec::inverse(), DampeningSpec::exponential(0.5, 1.0)};
  for (int trial = 0; trial < 200; ++trial) {
    const DampeningSpec& spec = specs[trial % 2];
    std::vector<EpochLambdas> epochs(5 + rng.index(30));
    for (auto& e : epochs) {
      e.gamma_t = std::exp(rng.uniform(-8.0, 0.0));
      e.lambdas.resize(1 + rng.index(3));
      for (double& l : e.lambdas) l = lambda_eval(spec, static_cast<std::int64_t>(rng.index(6)));
    }
    const double K = std::exp(rng.uniform(-1.0, 1.0));
    const PrerequisiteResult r = prerequisite_check(epochs, K, spec);
    const double expect = oracle_worst_residual(epochs, K, spec);
    REQUIRE(*r.worst_residual == doctest::Approx(expect).epsilon(1e-9));
    REQUIRE(r.holds == (expect >= 0.0));
  }
}

TEST_CASE("dampening comparison conditions") {
  const DampeningComparison c = dampening_compare(0.5, 1.0, 1, 10);
  REQUIRE(c.rows.size() == 10);
  CHECK(c.rows[0].lower_ok);
  CHECK(c.rows[0].upper_ok);   // ln 2 >= 0.5
  CHECK_FALSE(c.rows[9].upper_ok);  // ln 11 / 10 < 0.5
  REQUIRE(c.admissible_interval.has_value());
  CHECK(c.admissible_interval->first == 1);
  CHECK(c.admissible_interval->second == 2);  // ln 4 / 3 = 0.462 < 0.5
  CHECK(*c.chi_crossover == doctest::Approx(1.0 / (kE * 0.5 - 1.0)).epsilon(1e-12));

  const DampeningComparison none = dampening_compare(0.3, 1.0, 1, 10);  // 0.3 <= 1/e
  CHECK_FALSE(none.admissible_interval.has_value());
  CHECK_FALSE(none.chi_crossover.has_value());
  for (const auto& row : none.rows) CHECK_FALSE(row.faster);
}

TEST_CASE("chi crossover separates the chi comparison") {
  const DampeningComparison c = dampening_compare(0.5, 1.0, 1, 50);
  for (const auto& row : c.rows) {
    CHECK(row.chi_inverse_geq == (static_cast<double>(row.tau) >= *c.chi_crossover));
    CHECK(row.mu_inverse == doctest::Approx(1.0 + static_cast<double>(row.tau)));
  }
}

TEST_CASE("beta near 1.85 admits an alpha for staleness 1 to 10") {
  const auto range = admissible_alpha(1.85, 1, 10);
  REQUIRE(range.has_value());
  CHECK(range->first == doctest::Approx(1.85 / kE));
  CHECK(range->first < range->second);
  const double alpha = 0.5 * (range->first + range->second);
  const DampeningComparison c = dampening_compare(alpha, 1.85, 1, 10);
  for (const auto& row : c.rows) CHECK(row.faster);
  CHECK_FALSE(admissible_alpha(1.0, 1, 10).has_value());
}

}  // TEST_SUITE
