#pragma once

// Test-only reference implementations, kept deliberately naive and
// independent of the library's computation paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "npanel/panel.hpp"

namespace test_oracles {

/// Triple-loop cross moments, no compensation, no pair sharing.
inline std::vector<std::vector<double>> naive_cross_moments(const npanel::Panel& p) {
  const std::size_t n = p.n_units();
  const std::size_t t = p.n_periods();
  std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t s_idx = 0; s_idx < t; ++s_idx) s += p(i, s_idx) * p(k, s_idx);
      g[i][k] = s / static_cast<double>(t);
    }
  return g;
}

/// Direct evaluation of the missing-data discrepancy from its definition:
/// enumerate pairs {k,l}, intersect control periods, average.
inline std::optional<double> naive_causal_discrepancy(
    std::size_t i, std::size_t j, const npanel::Panel& p,
    const npanel::TreatmentMask& w, std::size_t s_min) {
  const std::size_t n = p.n_units();
  const std::size_t t = p.n_periods();
  double best = -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == i || k == j) continue;
    for (std::size_t l = k + 1; l < n; ++l) {
      if (l == i || l == j) continue;
      double num_k = 0.0, num_l = 0.0;
      std::size_t cnt = 0;
      for (std::size_t s = 0; s < t; ++s) {
        if (w.treated(i, s) || w.treated(j, s) || w.treated(k, s) || w.treated(l, s))
          continue;
        const double d = p(i, s) - p(j, s);
        num_k += d * p(k, s);
        num_l += d * p(l, s);
        ++cnt;
      }
      if (cnt < s_min) continue;
      const double stat =
          (std::fabs(num_k) + std::fabs(num_l)) / static_cast<double>(cnt);
      if (stat > best) best = stat;
    }
  }
  if (best < 0.0) return std::nullopt;
  return best;
}

/// Two-sample KS distance by brute force over a merged grid of all values.
inline double naive_ks(std::span<const double> a, std::span<const double> b) {
  auto ecdf = [](std::span<const double> xs, double v) {
    std::size_t c = 0;
    for (double x : xs)
      if (x <= v) ++c;
    return static_cast<double>(c) / static_cast<double>(xs.size());
  };
  double best = 0.0;
  for (double v : a) best = std::max(best, std::fabs(ecdf(a, v) - ecdf(b, v)));
  for (double v : b) best = std::max(best, std::fabs(ecdf(a, v) - ecdf(b, v)));
  return best;
}

}  // namespace test_oracles
