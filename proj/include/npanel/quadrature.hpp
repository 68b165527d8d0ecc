#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace npanel {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  template <typename F>
  double integrate(F&& f) const {
    // Fixed ascending-node order keeps results run-to-run reproducible.
    double s = 0.0, c = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const double y = weights[k] * f(nodes[k]) - c;
      const double t = s + y;
      c = (t - s) - y;
      s = t;
    }
    return s;
  }
};

/// Gauss-Legendre rule on [a, b]. Nodes found by Newton iteration on the
/// Legendre recurrence from the Chebyshev initial guess; accurate to machine
/// precision for any practical n.
inline QuadratureRule gauss_legendre(std::size_t n, double a = -1.0, double b = 1.0) {
  if (n == 0) throw std::invalid_argument("gauss_legendre: n must be positive");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const std::size_t m = (n + 1) / 2;
  const double xm = 0.5 * (b + a);
  const double xl = 0.5 * (b - a);
  for (std::size_t k = 0; k < m; ++k) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(k) + 0.75) /
                        (static_cast<double>(n) + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - static_cast<double>(j) * p2) /
             (static_cast<double>(j) + 1.0);
      }
      pp = static_cast<double>(n) * (z * p0 - p1) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p0 / pp;
      if (std::fabs(z - z1) < 1e-15) break;
    }
    rule.nodes[k] = xm - xl * z;
    rule.nodes[n - 1 - k] = xm + xl * z;
    rule.weights[k] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
    rule.weights[n - 1 - k] = rule.weights[k];
  }
  return rule;
}

enum class MarginalKind { uniform01, standard_normal };

/// Truncation half-width for standard-normal expectations; the dropped tail
/// mass is below 1.3e-15.
inline constexpr double kNormalTruncation = 8.0;

/// Quadrature rule whose weighted sum approximates E[f(X)] for X with the
/// given marginal. Uniform: Gauss-Legendre on [0,1] (exact for polynomials
/// up to degree 2n-1). Normal: Gauss-Legendre on [-8,8] against the density,
/// spectrally accurate for smooth integrands.
inline QuadratureRule expectation_rule(MarginalKind kind, std::size_t n_nodes) {
  if (kind == MarginalKind::uniform01) return gauss_legendre(n_nodes, 0.0, 1.0);
  QuadratureRule rule = gauss_legendre(n_nodes, -kNormalTruncation, kNormalTruncation);
  const double inv_sqrt_2pi = 0.3989422804014326779;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double x = rule.nodes[k];
    rule.weights[k] *= inv_sqrt_2pi * std::exp(-0.5 * x * x);
  }
  return rule;
}

}  // namespace npanel
