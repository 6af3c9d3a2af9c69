#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "kardam/errors.hpp"
#include "kardam/filter.hpp"
#include "kardam/rng.hpp"

using namespace kardam;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

FilterState history_state(int n, int f) {
  return FilterState(n, f, FilterOptions{ReferenceMode::kWorkerHistory, true, true});
}

// A state past warm-up whose reference gradient is g_q = [0, 0] and whose
// per-worker coefficients are `ks`.
FilterState seeded_history_state(const std::vector<double>& ks, int f) {
  FilterState s = history_state(static_cast<int>(ks.size()), f);
  for (std::size_t i = 0; i < ks.size(); ++i) s.records[i].k_hat = ks[i];
  s.last_accepted_grad = Vector{0, 0};
  s.updates = 1;
  return s;
}

GradientMessage msg(int id, Vector g, std::int64_t ts = 0) { return GradientMessage{id, std::move(g), ts, 0}; }

// Sorting oracle for the order statistic.
double sorted_quantile(std::vector<double> v, int f) {
  std::sort(v.begin(), v.end());
  return v[v.size() - static_cast<std::size_t>(f) - 1];
}

}  // namespace

TEST_SUITE("byz-filter") {

TEST_CASE("empirical Lipschitz coefficient") {
  CHECK(empirical_lipschitz(Vector{2, 0}, Vector{1, 0}, Vector{1, 0}, Vector{0.5, 0}) == 2.0);
  CHECK(empirical_lipschitz(Vector{1, 1}, Vector{1, 1}, Vector{3, 3}, Vector{3, 3}) == 0.0);
  CHECK(empirical_lipschitz(Vector{1, 2}, Vector{1, 1}, Vector{3, 3}, Vector{3, 3}) == kInf);
  CHECK_THROWS_AS(empirical_lipschitz(Vector{1}, Vector{1, 1}, Vector{3, 3}, Vector{3, 3}), ConfigError);
}

TEST_CASE("quantile is the (n-f)-th smallest value") {
  const std::vector<double> v{10.0, 1.0, 3.0, 2.0};
  CHECK(lipschitz_quantile(v, 4, 1) == 3.0);
  CHECK(lipschitz_quantile(std::vector<double>(6, 2.5), 6, 1) == 2.5);
  CHECK(lipschitz_quantile(v, 4, 0) == 10.0);
  CHECK_THROWS_AS(lipschitz_quantile(v, 5, 1), ConfigError);
}

TEST_CASE("quantile stays within the honest range for adversarial multisets") {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const int f = static_cast<int>(rng.index(4));
    const int n = 3 * f + 2 + static_cast<int>(rng.index(4));
    std::vector<double> values;
    double lo = kInf, hi = -kInf;
    for (int i = 0; i < n - f; ++i) {
      const double v = std::exp(rng.normal());
      values.push_back(v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (int i = 0; i < f; ++i) {
      const double pick = rng.uniform();
      values.push_back(pick < 0.3 ? 0.0 : pick < 0.6 ? kInf : std::exp(5 * rng.normal()));
    }
    for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[rng.index(i)]);
    const double q = lipschitz_quantile(values, n, f);
    REQUIRE(q == sorted_quantile(values, f));
    REQUIRE(q >= lo);
    REQUIRE(q <= hi);
  }
}

TEST_CASE("Lipschitz stage compares against the quantile of per-worker coefficients") {
  const FilterState s = seeded_history_state({1, 2, 3, 10}, 1);
  const Vector x_t{1, 0}, x_prev{0, 0};  // unit model step

  const FilterVerdict pass = lipschitz_filter(s, msg(0, {2.5, 0}), x_t, x_prev);
  CHECK(pass.accepted);
  CHECK(pass.reason == Reason::kAccepted);
  CHECK(*pass.candidate_k == 2.5);
  CHECK(*pass.threshold_k == 3.0);

  const FilterVerdict fail = lipschitz_filter(s, msg(0, {5.0, 0}), x_t, x_prev);
  CHECK_FALSE(fail.accepted);
  CHECK(fail.reason == Reason::kRejectedLipschitz);

  const FilterVerdict inf = lipschitz_filter(s, msg(0, {1.0, 0}), x_prev, x_prev);
  CHECK(inf.reason == Reason::kRejectedLipschitz);
  CHECK(*inf.candidate_k == kInf);
}

TEST_CASE("absent coefficients take the largest present value") {
  FilterState s = history_state(4, 1);
  s.records[0].k_hat = 1.0;
  s.records[1].k_hat = 4.0;
  s.last_accepted_grad = Vector{0, 0};
  s.updates = 1;
  // values become {1, 4, 4, 4}: the 3rd smallest is 4
  const FilterVerdict v = lipschitz_filter(s, msg(2, {3.9, 0}), Vector{1, 0}, Vector{0, 0});
  CHECK(v.accepted);
  CHECK(*v.threshold_k == 4.0);
}

TEST_CASE("warm-up bypasses the Lipschitz stage but not the frequency stage") {
  FilterState s = history_state(4, 1);
  const Vector x{0, 0};
  const FilterVerdict first = filter_pipeline(s, msg(0, {100, 100}), x, x, x);
  CHECK(first.accepted);
  CHECK(first.reason == Reason::kAcceptedWarmup);
  const FilterVerdict second = filter_pipeline(s, msg(1, {-100, 3}), x, x, x);
  CHECK(second.reason == Reason::kAcceptedWarmup);
  // f=1: window [0, 1], a third message from worker 1 breaks the top-1 rule
  const FilterVerdict third = filter_pipeline(s, msg(1, {0, 0}), x, x, x);
  CHECK(third.reason == Reason::kRejectedFrequency);
}

TEST_CASE("frequency rule on the transient window") {
  FilterState s = history_state(4, 1);
  s.window = {1, 2};
  CHECK(frequency_filter(s, 3).accepted);
  s.window = {1, 1};
  CHECK(frequency_filter(s, 1).reason == Reason::kRejectedFrequency);

  FilterState t = history_state(7, 2);
  t.window = {1, 2, 1, 3};
  CHECK(frequency_filter(t, 2).reason == Reason::kRejectedFrequency);
  CHECK(frequency_theta(std::vector<int>{1, 2, 1, 3, 2}, 7, 2) == std::vector<int>{1, 2});
  // ties go to the smaller id
  CHECK(frequency_theta(std::vector<int>{5, 3, 4}, 7, 2) == std::vector<int>{3, 4});
}

TEST_CASE("a partial window never holds a repeated worker") {
  FilterState s = history_state(10, 3);
  s.window = {4, 4};
  // the inequality alone would accept: top-3 of [4,4,4] sums to 3
  CHECK_FALSE(frequency_filter(s, 4).accepted);
  s.window = {4};
  CHECK_FALSE(frequency_filter(s, 4).accepted);
  CHECK(frequency_filter(s, 5).accepted);
}

TEST_CASE("frequency filter can be switched off") {
  FilterState s(4, 1, FilterOptions{ReferenceMode::kWorkerHistory, true, false});
  s.window = {1, 1};
  CHECK(frequency_filter(s, 1).accepted);
}

TEST_CASE("pipeline leaves state untouched on rejection and updates it on acceptance") {
  FilterState s = seeded_history_state({1, 2, 3, 10}, 1);
  s.window = {2, 3};
  const Vector x_t{1, 0}, x_prev{0, 0};

  const FilterState before = s;
  const FilterVerdict lip = filter_pipeline(s, msg(0, {50, 0}), x_t, x_t, x_prev);
  CHECK(lip.reason == Reason::kRejectedLipschitz);
  CHECK(s == before);

  const FilterVerdict freq = filter_pipeline(s, msg(3, {0.5, 0}), x_t, x_t, x_prev);
  CHECK(freq.reason == Reason::kRejectedFrequency);
  CHECK(s == before);

  s.records[0].last_grad = Vector{0, 1};
  s.records[0].last_point = Vector{0, 0};
  const FilterVerdict ok = filter_pipeline(s, msg(0, {1, 1}, 1), x_t, x_t, x_prev);
  CHECK(ok.accepted);
  CHECK(s.window == std::vector<int>{3, 0});
  CHECK(*s.last_accepted_grad == Vector{1, 1});
  CHECK(*s.records[0].k_hat == 1.0);  // |[1,1]-[0,1]| / |[1,0]-[0,0]|
  CHECK(s.accepted_count == 1);
}

TEST_CASE("latest-delivered mode measures every worker against the current reference") {
  FilterState s(4, 1);
  s.last_accepted_grad = Vector{0, 0};
  s.updates = 1;
  s.records[1].last_grad = Vector{1, 0};
  s.records[2].last_grad = Vector{2, 0};
  s.records[3].last_grad = Vector{8, 0};
  const Vector x_t{0.5, 0}, x_prev{0, 0};
  // coefficients {candidate, 2, 4, 16}
  FilterVerdict v = lipschitz_filter(s, msg(0, {1.5, 0}), x_t, x_prev);
  CHECK(*v.candidate_k == 3.0);
  CHECK(*v.threshold_k == 4.0);
  CHECK(v.accepted);
  v = lipschitz_filter(s, msg(0, {2.5, 0}), x_t, x_prev);
  CHECK(*v.threshold_k == 5.0);  // the candidate's own slot is the 3rd smallest
  CHECK(v.accepted);
  CHECK_FALSE(lipschitz_filter(s, msg(0, {9, 0}), x_t, x_prev).accepted);

  filter_observe(s, msg(0, {9, 0}), v);
  CHECK(*s.records[0].last_grad == Vector{9, 0});
}

TEST_CASE("slowdown ratio") {
  CHECK(*slowdown(70, 100) == 0.7);
  CHECK(*slowdown(0, 10) == 0.0);
  CHECK_FALSE(slowdown(0, 0).has_value());
  CHECK(4.0 / 7.0 == doctest::Approx(0.5714).epsilon(1e-4));
}

TEST_CASE("window audit helpers") {
  const std::vector<std::uint8_t> good{1, 1, 0, 1, 1, 0, 1};
  CHECK(lemma1_violations(good, 1) == 0);
  const std::vector<std::uint8_t> bad{1, 0, 0, 1, 1};
  CHECK(lemma1_violations(bad, 1) == 2);
  CHECK(lemma1_violations(std::vector<std::uint8_t>{0, 0}, 1) == 0);  // shorter than a window
  CHECK(longest_same_worker_run(std::vector<int>{1, 1, 2, 2, 2, 3}) == 3);
  CHECK(longest_same_worker_run(std::vector<int>{}) == 0);
}

TEST_CASE("random filter streams never violate the window guarantee") {
  // Byzantine ids are [0, f); they submit as often as they like, honest ids
  // take a random turn otherwise. Every accepted window of 2f+1 must hold f+1
  // honest ids and no id may repeat 2f+1 times in a row.
  Rng rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const int f = 1 + static_cast<int>(rng.index(3));
    const int n = 3 * f + 2 + static_cast<int>(rng.index(3));
    FilterState s(n, f, FilterOptions{ReferenceMode::kLatestDelivered, false, true});
    std::vector<std::uint8_t> honest;
    std::vector<int> ids;
    const Vector x{0};
    for (int step = 0; step < 200; ++step) {
      bool sent = false;
      for (int b = 0; b < f && !sent; ++b) {
        if (frequency_filter(s, b).accepted) {
          filter_pipeline(s, msg(b, {0}), x, x, x);
          honest.push_back(0);
          ids.push_back(b);
          sent = true;
        }
      }
      if (sent) continue;
      const int h = f + static_cast<int>(rng.index(static_cast<std::uint64_t>(n - f)));
      if (filter_pipeline(s, msg(h, {0}), x, x, x).accepted) {
        honest.push_back(1);
        ids.push_back(h);
      }
    }
    REQUIRE(lemma1_violations(honest, f) == 0);
    REQUIRE(longest_same_worker_run(ids) < 2 * f + 1);
  }
}

TEST_CASE("filter state constructor checks") {
  CHECK_THROWS_AS(FilterState(2, 1), ConfigError);
  CHECK_NOTHROW(FilterState(3, 1));
  FilterState s(4, 1);
  CHECK(s.in_warmup());
  CHECK_THROWS_AS(frequency_filter(s, 4), ConfigError);
}

}  // TEST_SUITE
