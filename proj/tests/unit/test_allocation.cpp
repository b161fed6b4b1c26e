#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "tta/allocation.hpp"
#include "tta/error.hpp"
#include "oracles.hpp"

using namespace tta;
using tta::test::grid_oracle;
using tta::test::two_class_alpha_disc;

namespace {

TimestepPlan plan_of(PolicyKind kind, int t, int T, std::size_t n, const ImportanceScores* s = nullptr,
                     double smooth = 0.6) {
  SchedulePolicy p;
  p.kind = kind;
  p.alpha_smooth = smooth;
  Rng rng(1);
  return allocate(p, t, T, n, s, rng);
}

}  // namespace

TEST_CASE("allocation formulas") {
  CHECK(plan_of(PolicyKind::linear, 100, 100, 5).t == std::vector<int>{0, 25, 50, 75, 100});
  CHECK(plan_of(PolicyKind::backward_linear, 100, 100, 5).t == std::vector<int>{100, 75, 50, 25, 0});
  CHECK(plan_of(PolicyKind::linear, 10, 64, 4).t == std::vector<int>{0, 3, 6, 10});
  const auto s = normalize_scores({1, 3, 2});
  CHECK(s.normalized == std::vector<double>{0.0, 1.0, 0.5});
  CHECK(plan_of(PolicyKind::adaptive, 100, 100, 3, &s).t == std::vector<int>{100, 60, 80});
  CHECK(plan_of(PolicyKind::constant, 0, 64, 4).t == std::vector<int>(4, 0));
  CHECK(plan_of(PolicyKind::constant, 17, 64, 3).t == std::vector<int>(3, 17));
  CHECK(plan_of(PolicyKind::fixed_zero, 40, 64, 3).t == std::vector<int>(3, 0));
  CHECK(plan_of(PolicyKind::fixed_T, 40, 64, 3).t == std::vector<int>(3, 64));
  // singleton convention
  CHECK(plan_of(PolicyKind::linear, 9, 64, 1).t == std::vector<int>{9});
  CHECK(plan_of(PolicyKind::backward_linear, 9, 64, 1).t == std::vector<int>{9});
}

TEST_CASE("adaptive with full smoothing equals the constant plan") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(12);
    for (double& v : g) v = rng.uniform() * 10.0;
    const auto s = normalize_scores(g);
    const int t = static_cast<int>(rng.uniform_int(0, 64));
    CHECK(plan_of(PolicyKind::adaptive, t, 64, 12, &s, 1.0) == plan_of(PolicyKind::constant, t, 64, 12));
  }
}

TEST_CASE("adaptive needs scores; bad smoothing is rejected") {
  CHECK_THROWS_AS(plan_of(PolicyKind::adaptive, 10, 64, 3), ContractError);
  const auto s = normalize_scores({1, 2, 3});
  CHECK_THROWS_AS(plan_of(PolicyKind::adaptive, 10, 64, 3, &s, 1.5), ConfigError);
  CHECK_THROWS_AS(plan_of(PolicyKind::constant, 70, 64, 3), ContractError);
  CHECK_THROWS_AS(parse_policy_kind("cosine"), ConfigError);
}

TEST_CASE("random allocation draws from (0, t) with its stream") {
  SchedulePolicy p;
  p.kind = PolicyKind::random;
  Rng a(5), b(5);
  std::vector<int> seen(64, 0);
  for (int k = 0; k < 200; ++k) {
    const auto x = allocate(p, 40, 64, 16, nullptr, a);
    CHECK(x == allocate(p, 40, 64, 16, nullptr, b));
    for (int v : x.t) {
      CHECK(v >= 1);
      CHECK(v <= 39);
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
  CHECK(std::accumulate(seen.begin(), seen.end(), 0) == 39);
}

TEST_CASE("allocation monotone in t and importance ordering") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 20));
    std::vector<double> g(n);
    for (double& v : g) v = rng.uniform();
    const auto s = normalize_scores(g);
    const double smooth = rng.uniform() * 0.99;
    for (PolicyKind kind : {PolicyKind::constant, PolicyKind::linear, PolicyKind::backward_linear, PolicyKind::adaptive}) {
      for (int t = 0; t < 64; ++t) {
        const auto lo = plan_of(kind, t, 64, n, &s, smooth);
        const auto hi = plan_of(kind, t + 1, 64, n, &s, smooth);
        for (std::size_t i = 0; i < n; ++i) CHECK(hi.t[i] >= lo.t[i]);
      }
    }
    for (int t = 0; t <= 64; t += 7) {
      const auto x = plan_of(PolicyKind::adaptive, t, 64, n, &s, smooth);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (s.normalized[i] > s.normalized[j]) CHECK(x.t[i] <= x.t[j]);
    }
    if (n >= 2) {
      for (int t = 0; t <= 64; t += 5) {
        const auto x = plan_of(PolicyKind::linear, t, 64, n);
        CHECK(x.t.front() == 0);
        CHECK(x.t.back() == t);
      }
    }
  }
}

TEST_CASE("policy JSON round trip") {
  SchedulePolicy p;
  p.kind = PolicyKind::adaptive;
  p.alpha_smooth = 0.25;
  const auto back = SchedulePolicy::from_json(p.to_json());
  CHECK(back.kind == PolicyKind::adaptive);
  CHECK(back.alpha_smooth == 0.25);
}

TEST_CASE("importance scores") {
  const auto s = importance_from_gradients(ad::Tensor({2, 2}, std::vector<double>{3, 4, 0, 0}));
  CHECK(s.raw == std::vector<double>{5.0, 0.0});
  CHECK(s.normalized == std::vector<double>{1.0, 0.0});
  const auto eq = importance_from_gradients(ad::Tensor({3, 2}, 1.0));
  CHECK(eq.normalized == std::vector<double>(3, 0.5));

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Tensor g({8, 5});
    for (double& v : g.data()) v = rng.normal();
    const auto sc = importance_from_gradients(g);
    for (double v : sc.normalized) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    std::vector<std::pair<double, int>> oracle;
    for (int i = 0; i < 8; ++i) oracle.emplace_back(-sc.raw[static_cast<std::size_t>(i)], i);
    std::sort(oracle.begin(), oracle.end());
    const auto top = sc.top_k(5);
    for (std::size_t k = 0; k < 5; ++k) CHECK(top[k] == oracle[k].second);
  }
  CHECK_THROWS_AS(eq.top_k(4), ContractError);
}

TEST_CASE("budgeted allocation examples") {
  AllocationProblem p{{2, 1}, 1.0, 0.1, 0.9};
  const auto s = solve_budgeted_allocation(p);
  CHECK(s[0] == doctest::Approx(0.1));
  CHECK(s[1] == doctest::Approx(0.9));
  CHECK(allocation_objective(p, s) == doctest::Approx(1.1));

  AllocationProblem eq{{3, 3, 3}, 1.2, 0.1, 0.9};
  const auto u = solve_budgeted_allocation(eq);
  for (double v : u) CHECK(v == doctest::Approx(0.4));
  CHECK(allocation_objective(eq, u) == doctest::Approx(3.0 * 1.2));

  CHECK_THROWS_AS(solve_budgeted_allocation({{1, 2}, 2.0, 0.1, 0.9}), ConfigError);
  CHECK_THROWS_AS(solve_budgeted_allocation({{1, 2}, 0.1, 0.1, 0.9}), ConfigError);
  CHECK_THROWS_AS(solve_budgeted_allocation({{-1, 2}, 1.0, 0.1, 0.9}), ConfigError);
}

TEST_CASE("budgeted allocation matches the grid oracle") {
  Rng rng(21);
  for (int inst = 0; inst < 50; ++inst) {
    const auto g = tta::test::random_grid_instance(inst, rng);
    const std::size_t n = g.weights_milli.size();
    const auto p = g.problem();
    const auto s = solve_budgeted_allocation(p);
    CAPTURE(inst);
    CHECK(std::abs(allocation_objective(p, s) - grid_oracle(g.weights_milli, g.budget, g.lo, g.hi)) < 1e-6);
    CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - p.budget) < 1e-9);
    for (double v : s) {
      CHECK(v >= p.var_min - 1e-12);
      CHECK(v <= p.var_max + 1e-12);
    }
    const std::vector<double> uniform(n, p.budget / static_cast<double>(n));
    CHECK(allocation_objective(p, s) <= allocation_objective(p, uniform) + 1e-12);
  }
}

TEST_CASE("duality endpoints and K independence") {
  CHECK(duality_alpha_tilde(1.0) == 1.0);
  CHECK(duality_alpha_tilde(0.0) == 0.0);
  const auto one = duality_schedule(1.0, 64);
  CHECK(one.alpha_tilde == 1.0);
  CHECK(one.alpha_disc == 1.0);
  const auto zero = duality_schedule(0.0, 64);
  CHECK(zero.alpha_tilde == 0.0);
  CHECK(zero.alpha_disc == 0.0);
  CHECK(std::abs(duality_alpha_tilde(0.5) * duality_alpha_tilde(0.5) - 0.8) < 1e-15);
  CHECK_THROWS_AS(duality_schedule(1.2, 4), DomainError);
  CHECK_THROWS_AS(duality_schedule(-0.1, 4), DomainError);
  CHECK_THROWS_AS(duality_schedule(0.5, 1), DomainError);
}

TEST_CASE("duality V=2 matches the Gaussian-difference closed form") {
  const auto mid = duality_schedule(0.5, 2, 1000000, 7);
  CHECK(std::abs(mid.alpha_disc - two_class_alpha_disc(0.5)) < 3.0 * mid.std_error);
  for (int k = 1; k <= 9; ++k) {
    const double ab = k / 10.0;
    const auto d = duality_schedule(ab, 2, 100000, 100 + static_cast<std::uint64_t>(k));
    CAPTURE(ab);
    CHECK(std::abs(d.alpha_disc - two_class_alpha_disc(ab)) < 3.0 * d.std_error);
  }
}

TEST_CASE("duality schedule is monotone on a 100-point grid") {
  double prev_tilde = -1.0, prev_disc = -1.0, prev_se = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double ab = k / 99.0;
    const auto d = duality_schedule(ab, 8, 20000);
    CHECK(d.alpha_tilde >= prev_tilde);
    CHECK(d.alpha_disc >= prev_disc - 3.0 * std::max(d.std_error, prev_se));
    prev_tilde = d.alpha_tilde;
    prev_disc = d.alpha_disc;
    prev_se = d.std_error;
  }
}
