#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "npanel/quadrature.hpp"
#include "npanel/rng.hpp"

using namespace npanel;

TEST_CASE("substreams are deterministic and label-separated") {
  Rng a = substream(42, "dgp/alpha");
  Rng b = substream(42, "dgp/alpha");
  Rng c = substream(42, "dgp/beta");
  bool diverged = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    REQUIRE(x == b.next_u64());
    if (x != c.next_u64()) diverged = true;
  }
  REQUIRE(diverged);
}

TEST_CASE("uniform01 stays inside the open interval") {
  Rng rng = substream(7, "u");
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("inverse normal cdf matches known quantiles") {
  REQUIRE(Rng::inverse_normal_cdf(0.5) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(Rng::inverse_normal_cdf(0.975) ==
          Catch::Approx(1.9599639845400545).epsilon(1e-12));
  REQUIRE(Rng::inverse_normal_cdf(0.025) ==
          Catch::Approx(-1.9599639845400545).epsilon(1e-12));
  REQUIRE(Rng::inverse_normal_cdf(1e-10) ==
          Catch::Approx(-6.361340902404056).epsilon(1e-9));
  // Round trip through the CDF.
  for (double x : {-3.0, -1.2, -0.1, 0.4, 2.7}) {
    REQUIRE(Rng::inverse_normal_cdf(normal_cdf(x)) == Catch::Approx(x).epsilon(1e-9));
  }
  REQUIRE_THROWS_AS(Rng::inverse_normal_cdf(0.0), std::domain_error);
  REQUIRE_THROWS_AS(Rng::inverse_normal_cdf(1.0), std::domain_error);
}

TEST_CASE("normal draws have the right first two moments") {
  Rng rng = substream(11, "n");
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  REQUIRE(mean == Catch::Approx(0.0).margin(4.0 / std::sqrt(double(n))));
  REQUIRE(var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
  const auto r2 = gauss_legendre(2, 0.0, 1.0);
  double s = 0.0;
  for (std::size_t k = 0; k < 2; ++k) s += r2.weights[k] * std::pow(r2.nodes[k], 3);
  REQUIRE(s == Catch::Approx(0.25).epsilon(1e-14));  // degree 3 with 2 nodes

  const auto r20 = gauss_legendre(20, 0.0, 1.0);
  REQUIRE(r20.integrate([](double x) { return std::exp(x); }) ==
          Catch::Approx(std::numbers::e - 1.0).epsilon(1e-14));

  const auto big = gauss_legendre(257, -1.0, 1.0);
  double wsum = 0.0;
  for (double w : big.weights) wsum += w;
  REQUIRE(wsum == Catch::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("expectation rules reproduce exact moments") {
  const auto u = expectation_rule(MarginalKind::uniform01, 257);
  REQUIRE(u.integrate([](double x) { return x * x; }) ==
          Catch::Approx(1.0 / 3.0).epsilon(1e-14));

  const auto n = expectation_rule(MarginalKind::standard_normal, 257);
  REQUIRE(n.integrate([](double) { return 1.0; }) == Catch::Approx(1.0).epsilon(1e-13));
  REQUIRE(n.integrate([](double x) { return x * x; }) ==
          Catch::Approx(1.0).epsilon(1e-13));
  // The +/-8 truncation leaves ~5e-12 of the fourth-moment tail outside.
  REQUIRE(n.integrate([](double x) { return x * x * x * x; }) ==
          Catch::Approx(3.0).epsilon(1e-10));
}
