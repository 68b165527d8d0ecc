#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "npanel/dgp.hpp"
#include "npanel/rng.hpp"

using namespace npanel;

namespace {

DgpSpec make_spec(GKind kind, double noise = -1.0) {
  DgpSpec spec;
  spec.g = GSpec::builtin(kind, noise);
  return spec;
}

}  // namespace

TEST_CASE("noiseless twfe panel is exactly additive") {
  DgpSpec spec = make_spec(GKind::twfe, 0.0);
  const auto sim = simulate(spec, 2, 2, 99);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 2; ++t)
      REQUIRE(sim.panel(i, t) == sim.truth.alpha(i, 0) + sim.truth.beta(t, 0));
}

TEST_CASE("sign_flip truth: mu matches alpha*(beta-1/2) and row means vanish") {
  DgpSpec spec = make_spec(GKind::sign_flip);
  const std::size_t t = 20000;
  const auto sim = simulate(spec, 4, t, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t s = 0; s < 40; ++s)
      REQUIRE(sim.mu(i, s) == sim.truth.alpha(i, 0) * (sim.truth.beta(s, 0) - 0.5));
  // mu(alpha) = 0 for every alpha: long-run row means shrink toward zero.
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0.0;
    for (std::size_t s = 0; s < t; ++s) m += sim.panel(i, s);
    REQUIRE(std::fabs(m / t) < 0.02);
  }
}

TEST_CASE("same spec and seed reproduce bit-identical output") {
  DgpSpec spec = make_spec(GKind::scale_noise);
  spec.rho_beta = 0.5;
  spec.rho_eps = 0.3;
  spec.assignment = AssignmentSpec::block(0.1);
  spec.effect = EffectSpec::constant(1.0);
  const auto a = simulate(spec, 6, 50, 1234);
  const auto b = simulate(spec, 6, 50, 1234);
  REQUIRE(a.panel.outcomes() == b.panel.outcomes());
  REQUIRE(a.mask == b.mask);
  REQUIRE(a.mu == b.mu);
  REQUIRE(a.true_att == b.true_att);
  const auto c = simulate(spec, 6, 50, 1235);
  REQUIRE_FALSE(a.panel.outcomes() == c.panel.outcomes());
}

TEST_CASE("mu oracle closed forms") {
  // scale_noise: linearity in eps kills the noise term.
  REQUIRE(mu_oracle(make_spec(GKind::scale_noise), 1.0, 0.3) ==
          Catch::Approx(0.3).margin(1e-15));
  // symmetric_square: alpha = 0 and alpha = 1 give identical mu functions.
  DgpSpec ss = make_spec(GKind::symmetric_square);
  for (double beta : {0.1, 0.4, 0.9}) {
    REQUIRE(mu_oracle(ss, 0.0, beta) == mu_oracle(ss, 1.0, beta));
    REQUIRE(mu_oracle(ss, 0.0, beta) == Catch::Approx(0.25 * (beta - 0.5)));
  }
  // twfe with uniform eps: the noise mean shifts mu.
  DgpSpec tw = make_spec(GKind::twfe);
  tw.latents.epsilon = MarginalKind::uniform01;
  REQUIRE(mu_oracle(tw, 0.2, 0.3) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("custom g: quadrature oracle integrates the noise away") {
  // g = alpha + beta + (2u-1)^3 with u ~ U[0,1]: the cubic has mean zero.
  DgpSpec spec;
  spec.g.kind = GKind::custom;
  spec.g.fn = [](std::span<const double> a, std::span<const double> b,
                 std::span<const double> e) {
    const double z = 2.0 * e[0] - 1.0;
    return a[0] + b[0] + z * z * z;
  };
  spec.latents.epsilon = MarginalKind::uniform01;
  REQUIRE(mu_oracle(spec, 0.2, 0.5) == Catch::Approx(0.7).margin(1e-6));

  // Unbounded custom eps needs an explicit truncation bound.
  DgpSpec bad = spec;
  bad.latents.epsilon = MarginalKind::standard_normal;
  REQUIRE_THROWS_AS(mu_oracle(bad, 0.2, 0.5), std::invalid_argument);
  bad.g.eps_truncation = 8.0;
  bad.g.fn = [](std::span<const double> a, std::span<const double> b,
                std::span<const double> e) { return a[0] + b[0] + e[0]; };
  REQUIRE(mu_oracle(bad, 0.2, 0.5) == Catch::Approx(0.7).margin(1e-8));
}

TEST_CASE("mu oracle matches the empirical conditional mean for each builtin") {
  const double alpha = 0.3, beta = 0.7;
  for (GKind kind : {GKind::twfe, GKind::linear_factor, GKind::sign_flip,
                     GKind::scale_noise, GKind::symmetric_square}) {
    DgpSpec spec = make_spec(kind, 1.0);  // force noise into every form
    Rng rng = substream(313, "empirical-mu");
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    const double a[1] = {alpha}, b[1] = {beta};
    for (int r = 0; r < n; ++r) {
      double e[1] = {rng.normal()};
      const double y = eval_g(spec.g, a, b, e);
      s += y;
      s2 += y * y;
    }
    const double mean = s / n;
    const double sd = std::sqrt((s2 / n - mean * mean) / n);
    REQUIRE(mu_oracle(spec, alpha, beta) == Catch::Approx(mean).margin(4.0 * sd));
  }
}

TEST_CASE("rescaled custom g yields exactly rescaled outcomes") {
  DgpSpec base = make_spec(GKind::twfe, 1.0);
  DgpSpec scaled;
  scaled.g.kind = GKind::custom;
  scaled.g.fn = [](std::span<const double> a, std::span<const double> b,
                   std::span<const double> e) { return 2.0 * (a[0] + b[0] + e[0]); };
  scaled.g.eps_truncation = 8.0;
  const auto s0 = simulate(base, 5, 20, 777);
  const auto s1 = simulate(scaled, 5, 20, 777);
  REQUIRE(s0.mask == s1.mask);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 20; ++t)
      REQUIRE(s1.panel(i, t) == 2.0 * s0.panel(i, t));
}

TEST_CASE("AR(1) time component keeps a stationary marginal") {
  DgpSpec spec = make_spec(GKind::twfe, 0.0);
  spec.rho_beta = 0.8;
  const std::size_t n_seeds = 4000, t = 5;
  std::vector<double> sum(t, 0.0), sum2(t, 0.0);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto sim = simulate(spec, 2, t, 50000 + s);
    for (std::size_t k = 0; k < t; ++k) {
      const double b = sim.truth.beta(k, 0);
      sum[k] += b;
      sum2[k] += b * b;
    }
  }
  // U[0,1] marginal: variance 1/12 at every t. MC standard error of the
  // variance estimate: sqrt((mu4 - sigma^4)/n), mu4 = 1/80.
  const double se = std::sqrt((1.0 / 80.0 - 1.0 / 144.0) / n_seeds);
  for (std::size_t k = 0; k < t; ++k) {
    const double m = sum[k] / n_seeds;
    const double v = sum2[k] / n_seeds - m * m;
    REQUIRE(v == Catch::Approx(1.0 / 12.0).margin(3.0 * se));
  }
}

TEST_CASE("assignment is unconfounded within latent strata") {
  DgpSpec spec = make_spec(GKind::sign_flip, 0.5);
  spec.assignment = AssignmentSpec::block(0.2);
  const auto sim = simulate(spec, 300, 300, 2024);
  // Discretize (alpha, beta) into a 10x10 grid whose boundaries include the
  // block threshold at 0.5, so the propensity is constant within a stratum
  // and the treated/untreated mean Y(0) difference is pure noise.
  struct Cell {
    double sw = 0, sw2 = 0, nw = 0, su = 0, su2 = 0, nu = 0;
  };
  std::map<std::pair<int, int>, Cell> acc;
  for (std::size_t i = 0; i < 300; ++i)
    for (std::size_t t = 0; t < 300; ++t) {
      const int sa = std::min(9, int(sim.truth.alpha(i, 0) * 10));
      const int sb = std::min(9, int(sim.truth.beta(t, 0) * 10));
      auto& a = acc[{sa, sb}];
      // effect is none, so the observed outcome is Y(0) everywhere
      const double y = sim.panel(i, t);
      if (sim.mask.treated(i, t)) {
        a.sw += y;
        a.sw2 += y * y;
        a.nw += 1.0;
      } else {
        a.su += y;
        a.su2 += y * y;
        a.nu += 1.0;
      }
    }
  std::size_t checked = 0;
  double worst = 0.0;
  for (const auto& [key, a] : acc) {
    if (a.nw < 60 || a.nu < 60) continue;
    const double mw = a.sw / a.nw, mu = a.su / a.nu;
    const double vw = a.sw2 / a.nw - mw * mw, vu = a.su2 / a.nu - mu * mu;
    const double se = std::sqrt(vw / a.nw + vu / a.nu);
    worst = std::max(worst, std::fabs(mw - mu) / se);
    ++checked;
  }
  REQUIRE(checked >= 50);
  // Max over ~100 independent z-statistics: 4.5 sigma keeps the false-alarm
  // probability below 1e-3 while any real confounding shows up far larger.
  REQUIRE(worst < 4.5);
}

TEST_CASE("block assignment treats the high quadrant at rate 1-c") {
  DgpSpec spec = make_spec(GKind::sign_flip);
  spec.assignment = AssignmentSpec::block(0.1);
  const auto sim = simulate(spec, 200, 200, 31);
  std::size_t treated = 0, cells = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    if (sim.truth.alpha(i, 0) <= 0.5) continue;
    for (std::size_t t = 0; t < 200; ++t) {
      if (sim.truth.beta(t, 0) <= 0.5) continue;
      ++cells;
      if (sim.mask.treated(i, t)) ++treated;
    }
  }
  REQUIRE(cells > 5000);
  REQUIRE(double(treated) / double(cells) == Catch::Approx(0.9).margin(0.02));
}

TEST_CASE("propensity families") {
  const LatentDists dists;
  const double a1[1] = {0.3}, b1[1] = {0.9};
  const double a2[1] = {0.8}, b2[1] = {0.2};

  const auto uni = AssignmentSpec::uniform(0.3);
  REQUIRE(uni.propensity(a1, b1, dists) == 0.3);
  REQUIRE(uni.propensity(a2, b2, dists) == 0.3);

  // b = 0: propensity depends on the unit component only.
  const auto conf = AssignmentSpec::confounded_logistic(2.0, 0.0, 0.1);
  REQUIRE(conf.propensity(a1, b1, dists) == conf.propensity(a1, b2, dists));
  REQUIRE(conf.propensity(a1, b1, dists) != conf.propensity(a2, b1, dists));
  REQUIRE(conf.propensity(a2, b1, dists) == Catch::Approx(logistic(1.6)));

  const auto blk = AssignmentSpec::block(0.1);
  REQUIRE(blk.propensity(a2, b1, dists) == 0.9);
  REQUIRE(blk.propensity(a1, b1, dists) == 0.1);
  REQUIRE(blk.propensity(a2, b2, dists) == 0.1);

  REQUIRE_THROWS_AS(AssignmentSpec::block(0.6).validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(AssignmentSpec::uniform(1.2).validate(), std::invalid_argument);
  REQUIRE(builtin_assignments().size() == 3);
}

TEST_CASE("spec validation rejects bad inputs before sampling") {
  DgpSpec spec = make_spec(GKind::twfe);
  spec.rho_beta = 1.0;
  REQUIRE_THROWS_AS(simulate(spec, 4, 4, 1), std::invalid_argument);
  DgpSpec c;
  c.g.kind = GKind::custom;  // missing function
  REQUIRE_THROWS_AS(simulate(c, 4, 4, 1), std::invalid_argument);
  DgpSpec ok = make_spec(GKind::twfe);
  REQUIRE_THROWS_AS(simulate(ok, 1, 4, 1), std::invalid_argument);
}

TEST_CASE("true ATT records the average effect over treated cells") {
  DgpSpec spec = make_spec(GKind::twfe, 0.0);
  spec.assignment = AssignmentSpec::uniform(0.4);
  spec.effect = EffectSpec::constant(2.5);
  const auto sim = simulate(spec, 10, 30, 8);
  REQUIRE(sim.true_att == Catch::Approx(2.5));
  std::size_t treated = 0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t t = 0; t < 30; ++t)
      if (sim.mask.treated(i, t)) {
        ++treated;
        REQUIRE(sim.panel(i, t) ==
                Catch::Approx(sim.truth.alpha(i, 0) + sim.truth.beta(t, 0) + 2.5));
      }
  REQUIRE(treated > 0);
}
