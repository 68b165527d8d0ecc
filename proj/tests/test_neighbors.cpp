#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "npanel/dgp.hpp"
#include "npanel/neighbors.hpp"
#include "npanel/rng.hpp"
#include "oracles.hpp"

using namespace npanel;

namespace {

Panel random_panel(std::size_t n, std::size_t t, std::uint64_t seed,
                   double scale = 1.0) {
  Rng rng = substream(seed, "test/random-panel");
  Matrix m(n, t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s) m(i, s) = scale * rng.normal();
  return Panel(std::move(m));
}

TreatmentMask random_mask(std::size_t n, std::size_t t, double p,
                          std::uint64_t seed) {
  Rng rng = substream(seed, "test/random-mask");
  TreatmentMask w(n, t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s) w.set(i, s, rng.bernoulli(p));
  return w;
}

}  // namespace

TEST_CASE("cross moments: all-ones panel") {
  const Panel p(Matrix(4, 6, 1.0));
  const auto gm = cross_moments(p);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) REQUIRE(gm(i, k) == 1.0);
}

TEST_CASE("cross moments: rank-one two-period panel by hand") {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(0, 1) = -1.0;
  m(1, 0) = 2.0;
  m(1, 1) = -2.0;
  const auto gm = cross_moments(Panel(std::move(m)));
  REQUIRE(gm(0, 0) == 1.0);
  REQUIRE(gm(0, 1) == 2.0);
  REQUIRE(gm(1, 0) == 2.0);
  REQUIRE(gm(1, 1) == 4.0);
}

TEST_CASE("cross moments match the naive triple loop") {
  const Panel p = random_panel(5, 7, 42);
  const auto gm = cross_moments(p);
  const auto naive = test_oracles::naive_cross_moments(p);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 5; ++k)
      REQUIRE(gm(i, k) == Catch::Approx(naive[i][k]).margin(1e-12));
}

TEST_CASE("cross moments are independent of thread count") {
  const Panel p = random_panel(13, 40, 77);
  const auto g1 = cross_moments(p, 1);
  const auto g4 = cross_moments(p, 4);
  REQUIRE(g1.values == g4.values);
}

TEST_CASE("discrepancy: identical rows give zero") {
  Matrix m(3, 4, 0.0);
  Rng rng = substream(1, "dup");
  for (std::size_t s = 0; s < 4; ++s) {
    const double v = rng.normal();
    m(0, s) = v;
    m(1, s) = v;
    m(2, s) = rng.normal();
  }
  const auto gm = cross_moments(Panel(std::move(m)));
  REQUIRE(discrepancy(0, 1, gm) == 0.0);
  REQUIRE_THROWS_AS(discrepancy(0, 0, gm), std::invalid_argument);
}

TEST_CASE("discrepancy closed form on a noiseless additive panel") {
  // Y_it = alpha_i + beta_t  =>  G_ik - G_jk = (alpha_i - alpha_j)(alpha_k + mean beta)
  const std::vector<double> alpha{0.1, 0.9, 0.4, 0.65, 0.3};
  const std::vector<double> beta{0.2, 0.8, 0.5, 0.35, 0.6, 0.95};
  Matrix m(5, 6);
  double beta_mean = 0.0;
  for (double b : beta) beta_mean += b;
  beta_mean /= 6.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t s = 0; s < 6; ++s) m(i, s) = alpha[i] + beta[s];
  const auto gm = cross_moments(Panel(std::move(m)));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      if (i == j) continue;
      double expected = 0.0;
      for (std::size_t k = 0; k < 5; ++k)
        if (k != i && k != j)
          expected = std::max(expected, std::fabs(alpha[i] - alpha[j]) *
                                            std::fabs(alpha[k] + beta_mean));
      REQUIRE(discrepancy(i, j, gm) == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("discrepancy recovers the unit ordering under mean-zero interactions") {
  // Y_it = alpha_i (beta_t - 1/2): row means are ~0, yet
  // disc(i,j) = |alpha_i - alpha_j| * max_k alpha_k * avg (beta-1/2)^2.
  DgpSpec spec;
  spec.g = GSpec::builtin(GKind::sign_flip);
  const auto sim = simulate(spec, 6, 400, 9);
  const auto gm = cross_moments(sim.panel);
  double vhat = 0.0;
  for (std::size_t s = 0; s < 400; ++s) {
    const double b = sim.truth.beta(s, 0) - 0.5;
    vhat += b * b;
  }
  vhat /= 400.0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) {
      double amax = 0.0;
      for (std::size_t k = 0; k < 6; ++k)
        if (k != i && k != j) amax = std::max(amax, sim.truth.alpha(k, 0));
      const double expected =
          std::fabs(sim.truth.alpha(i, 0) - sim.truth.alpha(j, 0)) * amax * vhat;
      REQUIRE(discrepancy(i, j, gm) == Catch::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("neighbor sets: tolerance extremes") {
  const Panel p = random_panel(6, 30, 5);
  const auto gm = cross_moments(p);
  const double bound = empirical_bound(p);
  const auto all = neighbor_set(2, 2.0 * bound * bound, gm);
  REQUIRE(all.members.size() == 6);  // |G_ik - G_jk| <= 2 C^2 always
  const auto self_only = neighbor_set(2, 0.0, gm);
  REQUIRE(self_only.members == std::vector<std::size_t>{2});
  REQUIRE(self_only.stat_for(2)->value == 0.0);
  REQUIRE_THROWS_AS(neighbor_set(0, -1.0, gm), std::invalid_argument);
}

TEST_CASE("control periods") {
  TreatmentMask all_zero(3, 5);
  const std::size_t units_arr[2] = {0, 1};
  auto s = control_periods(std::span<const std::size_t>(units_arr, 2), all_zero);
  REQUIRE(s.periods == std::vector<std::size_t>{0, 1, 2, 3, 4});

  // W_0 = [0,0,1,0], W_1 = [0,1,0,0]: joint control periods are {0,3}.
  TreatmentMask w(2, 4);
  w.set(0, 2, true);
  w.set(1, 1, true);
  auto s2 = control_periods(std::span<const std::size_t>(units_arr, 2), w);
  REQUIRE(s2.periods == std::vector<std::size_t>{0, 3});
  REQUIRE_THROWS_AS(control_periods({}, w), std::invalid_argument);
}

TEST_CASE("control-period count under block assignment follows the product bound") {
  DgpSpec spec;
  spec.g = GSpec::builtin(GKind::sign_flip);
  spec.assignment = AssignmentSpec::block(0.1);
  const std::size_t t = 400;
  const auto sim = simulate(spec, 8, t, 17);
  const std::vector<std::size_t> units{0, 1, 2, 3};
  const auto s = control_periods(units, sim.mask);
  // True per-period control probability from the stored latents.
  double expected = 0.0, var = 0.0;
  for (std::size_t s_idx = 0; s_idx < t; ++s_idx) {
    double p_all = 1.0;
    for (std::size_t u : units)
      p_all *= 1.0 - spec.assignment.propensity(sim.truth.alpha.row(u),
                                                sim.truth.beta.row(s_idx),
                                                spec.latents);
    expected += p_all;
    var += p_all * (1.0 - p_all);
  }
  REQUIRE(expected >= t * std::pow(0.1, 4));  // overlap floor
  REQUIRE(std::fabs(double(s.periods.size()) - expected) <= 3.0 * std::sqrt(var));
}

TEST_CASE("causal discrepancy: all-control mask reduces to prediction algebra") {
  const Panel p = random_panel(7, 50, 21);
  TreatmentMask w(7, 50);
  CausalScanner scanner(p, w, 5);
  const auto gm = cross_moments(p);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = i + 1; j < 7; ++j) {
      // Sum of the two largest single-comparison statistics.
      std::vector<double> d;
      for (std::size_t k = 0; k < 7; ++k)
        if (k != i && k != j) d.push_back(std::fabs(gm(i, k) - gm(j, k)));
      std::sort(d.rbegin(), d.rend());
      const auto st = scanner.statistic(i, j);
      REQUIRE(st.value.has_value());
      REQUIRE(*st.value == d[0] + d[1]);  // exact: same arithmetic path
      const double single_max = d[0];
      REQUIRE(*st.value >= single_max);
      REQUIRE(*st.value <= 2.0 * single_max);
    }
}

TEST_CASE("causal discrepancy: identical rows on shared control periods give zero") {
  Matrix m = random_panel(6, 60, 33).outcomes();
  for (std::size_t s = 0; s < 60; ++s) m(1, s) = m(0, s);
  const Panel p(std::move(m));
  const auto w = random_mask(6, 60, 0.2, 34);
  const auto st = causal_discrepancy(0, 1, p, w, 5);
  REQUIRE(st.value.has_value());
  REQUIRE(*st.value == 0.0);
}

TEST_CASE("causal discrepancy matches the naive enumeration oracle") {
  for (std::uint64_t seed : {101, 102, 103}) {
    const Panel p = random_panel(8, 60, seed);
    const auto w = random_mask(8, 60, 0.3, seed + 1000);
    CausalScanner scanner(p, w, 5);
    CausalScanner::Workspace ws;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        if (i == j) continue;
        const auto fast = scanner.statistic(i, j, ws);
        const auto slow = test_oracles::naive_causal_discrepancy(i, j, p, w, 5);
        REQUIRE(fast.value.has_value() == slow.has_value());
        if (slow)
          REQUIRE(*fast.value == Catch::Approx(*slow).margin(1e-10));
      }
  }
}

TEST_CASE("causal discrepancy is symmetric in i and j") {
  const Panel p = random_panel(9, 80, 55);
  const auto w = random_mask(9, 80, 0.25, 56);
  CausalScanner scanner(p, w, 10);
  CausalScanner::Workspace ws;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = i + 1; j < 9; ++j) {
      const auto a = scanner.statistic(i, j, ws);
      const auto b = scanner.statistic(j, i, ws);
      REQUIRE(a.value.has_value() == b.value.has_value());
      if (a.value) REQUIRE(*a.value == *b.value);
    }
}

TEST_CASE("fully treated candidate is excluded with insufficient overlap") {
  const Panel p = random_panel(6, 80, 61);
  TreatmentMask w = random_mask(6, 80, 0.15, 62);
  for (std::size_t s = 0; s < 80; ++s) w.set(3, s, true);
  for (std::size_t i = 0; i < 6; ++i) {
    if (i == 3) continue;
    const auto set = causal_neighbor_set(i, 1e9, p, w, 10);
    REQUIRE_FALSE(set.contains(3));
    REQUIRE(set.stat_for(3)->exclusion == ExclusionReason::insufficient_overlap);
    // Everyone else is admissible at a huge tolerance.
    REQUIRE(set.members.size() == 4);
    REQUIRE_FALSE(set.contains(i));  // center excluded in causal mode
  }
}

TEST_CASE("all-control causal sets contain the halved-tolerance prediction sets") {
  // causal stat <= 2 * prediction stat, so prediction members at nu/2 are
  // causal members at nu. Checked exhaustively on random 6 x 50 panels.
  for (std::uint64_t seed = 200; seed < 210; ++seed) {
    const Panel p = random_panel(6, 50, seed);
    TreatmentMask w(6, 50);
    const auto gm = cross_moments(p);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> stats;
      for (std::size_t j = 0; j < 6; ++j)
        if (j != i) stats.push_back(discrepancy(i, j, gm));
      std::sort(stats.begin(), stats.end());
      const double nu = stats[2] * 2.0;  // admits >= 3 prediction neighbors at nu/2
      const auto pred = neighbor_set(i, nu / 2.0, gm);
      const auto caus = causal_neighbor_set(i, nu, p, w, 5);
      for (std::size_t j : pred.members) {
        if (j == i) continue;
        REQUIRE(caus.contains(j));
      }
    }
  }
}

TEST_CASE("adaptive nu policies") {
  REQUIRE(adaptive_nu(std::vector<double>{0.5}, NuPolicy::theory(0.8)) == 0.1);
  const std::vector<double> stats{0.3, 0.1, 0.5};
  REQUIRE(adaptive_nu(stats, NuPolicy::k_nearest(1)) == 0.1);
  REQUIRE(adaptive_nu(stats, NuPolicy::k_nearest(3)) == 0.5);
  REQUIRE_THROWS_AS(adaptive_nu(stats, NuPolicy::k_nearest(4)), std::invalid_argument);
  const std::vector<double> qs{1.0, 2.0, 3.0, 4.0};
  REQUIRE(adaptive_nu(qs, NuPolicy::quantile(0.5)) == 2.5);  // midpoint rule
  REQUIRE(adaptive_nu(qs, NuPolicy::quantile(0.0)) == 1.0);
  REQUIRE(adaptive_nu(qs, NuPolicy::quantile(1.0)) == 4.0);
  REQUIRE(NuPolicy::default_for(60).k == 9);   // ceil(log 60) + 4
  REQUIRE(NuPolicy::default_for(200).k == 10); // ceil(log 200) + 4
}

TEST_CASE("oracle similarity set: additive mu separates, symmetric mu pairs up") {
  std::vector<double> grid(101);
  for (int a = 0; a <= 100; ++a) grid[a] = a / 100.0;

  DgpSpec tw;
  tw.g = GSpec::builtin(GKind::twfe, 0.0);
  const auto only = oracle_similar_alphas(tw, 0.3, grid, 257, 1e-8);
  REQUIRE(only == std::vector<double>{0.3});

  DgpSpec ss;
  ss.g = GSpec::builtin(GKind::symmetric_square);
  const auto pair = oracle_similar_alphas(ss, 0.3, grid, 257, 1e-8);
  REQUIRE(pair == std::vector<double>{0.3, 0.7});

  // Accepted values must be L2-close: the sup functional bounds the L2
  // distance up to a DGP constant (12 for the mean-zero interaction form,
  // 192 for the symmetric square; see the expansion of mu against the grid).
  DgpSpec sf;
  sf.g = GSpec::builtin(GKind::sign_flip);
  const double tol = 1e-8;
  for (double q : {0.0, 0.25, 0.5, 0.62}) {
    for (double a2 : oracle_similar_alphas(sf, q, grid, 257, tol))
      REQUIRE(mu_l2_distance(sf, q, a2) <= 12.0 * tol * tol + 1e-18);
    for (double a2 : oracle_similar_alphas(ss, q, grid, 257, tol))
      REQUIRE(mu_l2_distance(ss, q, a2) <= 192.0 * tol * tol + 1e-18);
  }
}
