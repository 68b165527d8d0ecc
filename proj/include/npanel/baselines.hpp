#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "npanel/matrix.hpp"
#include "npanel/panel.hpp"

namespace npanel {

enum class MatcherKind { row_mean, l2, ks, twfe_regression };

inline const char* to_string(MatcherKind k) {
  switch (k) {
    case MatcherKind::row_mean: return "row_mean";
    case MatcherKind::l2: return "l2";
    case MatcherKind::ks: return "ks";
    case MatcherKind::twfe_regression: return "twfe";
  }
  return "?";
}

namespace detail {

/// Top-k units by ascending criterion, ties broken by lower unit index.
inline std::vector<std::size_t> top_k(const std::vector<double>& crit, std::size_t self,
                                      std::size_t k) {
  std::vector<std::size_t> order;
  order.reserve(crit.size());
  for (std::size_t j = 0; j < crit.size(); ++j)
    if (j != self) order.push_back(j);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (crit[a] != crit[b]) return crit[a] < crit[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

}  // namespace detail

/// Matches on the time-average outcome |mean(Y_j) - mean(Y_i)|. Works only
/// when the unit component moves the row mean; a mean-zero interaction hides
/// it completely.
inline std::vector<std::size_t> match_row_mean(std::size_t i, const Panel& panel,
                                               std::size_t k) {
  const std::size_t n = panel.n_units();
  if (k >= n) throw std::invalid_argument("match_row_mean: k must be < N");
  std::vector<double> means(n);
  const double inv_t = 1.0 / static_cast<double>(panel.n_periods());
  for (std::size_t j = 0; j < n; ++j)
    means[j] = kahan_sum(panel.unit_row(j)) * inv_t;
  std::vector<double> crit(n);
  for (std::size_t j = 0; j < n; ++j) crit[j] = std::fabs(means[j] - means[i]);
  return detail::top_k(crit, i, k);
}

/// Matches on the mean squared outcome distance (1/T) sum_t (Y_jt - Y_it)^2.
/// Unit-scaled noise pulls the minimizer away from matching latents.
inline std::vector<std::size_t> match_l2(std::size_t i, const Panel& panel,
                                         std::size_t k) {
  const std::size_t n = panel.n_units();
  if (k >= n) throw std::invalid_argument("match_l2: k must be < N");
  const std::size_t t = panel.n_periods();
  const auto yi = panel.unit_row(i);
  std::vector<double> crit(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const auto yj = panel.unit_row(j);
    KahanSum acc;
    for (std::size_t s = 0; s < t; ++s) {
      const double d = yj[s] - yi[s];
      acc.add(d * d);
    }
    crit[j] = acc.value() / static_cast<double>(t);
  }
  return detail::top_k(crit, i, k);
}

/// Exact two-sample Kolmogorov-Smirnov sup distance between the empirical
/// CDFs of two samples (right-continuous steps; ties advance both sides).
inline double ks_distance(std::span<const double> a, std::span<const double> b) {
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size());
  const double nb = static_cast<double>(y.size());
  std::size_t ia = 0, ib = 0;
  double best = 0.0;
  while (ia < x.size() && ib < y.size()) {
    const double v = std::min(x[ia], y[ib]);
    while (ia < x.size() && x[ia] <= v) ++ia;
    while (ib < y.size() && y[ib] <= v) ++ib;
    const double d = std::fabs(static_cast<double>(ia) / na -
                               static_cast<double>(ib) / nb);
    if (d > best) best = d;
  }
  return best;
}

/// Matches on the KS distance between the rows' marginal distributions over
/// time. Distinct unit components with identical outcome laws are
/// indistinguishable to this criterion.
inline std::vector<std::size_t> match_ks(std::size_t i, const Panel& panel,
                                         std::size_t k) {
  const std::size_t n = panel.n_units();
  if (k >= n) throw std::invalid_argument("match_ks: k must be < N");
  std::vector<double> crit(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) crit[j] = ks_distance(panel.unit_row(i), panel.unit_row(j));
  return detail::top_k(crit, i, k);
}

// ---------------------------------------------------------------------------
// Two-way fixed effects comparator
// ---------------------------------------------------------------------------

struct TwoWayFit {
  double tau_hat = 0.0;
  Matrix fitted_mu;  // alpha_i + lambda_t component of the fit (no W term)
};

namespace detail {

inline void demean_two_way(Matrix& x, double tol) {
  const std::size_t n = x.rows();
  const std::size_t t = x.cols();
  for (int iter = 0; iter < 200; ++iter) {
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = kahan_sum(x.row(i)) / static_cast<double>(t);
      if (std::fabs(m) > max_change) max_change = std::fabs(m);
      for (std::size_t s = 0; s < t; ++s) x(i, s) -= m;
    }
    for (std::size_t s = 0; s < t; ++s) {
      KahanSum acc;
      for (std::size_t i = 0; i < n; ++i) acc.add(x(i, s));
      const double m = acc.value() / static_cast<double>(n);
      if (std::fabs(m) > max_change) max_change = std::fabs(m);
      for (std::size_t i = 0; i < n; ++i) x(i, s) -= m;
    }
    if (max_change < tol) break;
  }
}

}  // namespace detail

/// Within estimator: the coefficient on W from least squares of Y on unit
/// dummies, time dummies, and W, computed by iterated two-way demeaning
/// (tolerance 1e-10) followed by the univariate regression.
inline TwoWayFit twfe_fit(const Panel& panel, const TreatmentMask& mask) {
  if (!mask.matches(panel))
    throw std::invalid_argument("twfe_fit: mask does not match panel");
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();

  Matrix y = panel.outcomes();
  Matrix w(n, t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s) w(i, s) = mask.treated(i, s) ? 1.0 : 0.0;

  detail::demean_two_way(y, 1e-10);
  detail::demean_two_way(w, 1e-10);

  KahanSum wy, ww;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      wy.add(w(i, s) * y(i, s));
      ww.add(w(i, s) * w(i, s));
    }
  if (ww.value() <= 0.0)
    throw std::runtime_error("twfe_fit: treatment has no variation after demeaning");
  TwoWayFit fit;
  fit.tau_hat = wy.value() / ww.value();

  // Two-way means of Y - tau*W give the additive fit used for mu scoring.
  Matrix resid(n, t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s)
      resid(i, s) = panel(i, s) - fit.tau_hat * (mask.treated(i, s) ? 1.0 : 0.0);
  std::vector<double> row_mean(n, 0.0), col_mean(t, 0.0);
  double grand = 0.0;
  {
    KahanSum g;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = kahan_sum(resid.row(i)) / static_cast<double>(t);
      row_mean[i] = m;
      g.add(m);
    }
    grand = g.value() / static_cast<double>(n);
    for (std::size_t s = 0; s < t; ++s) {
      KahanSum acc;
      for (std::size_t i = 0; i < n; ++i) acc.add(resid(i, s));
      col_mean[s] = acc.value() / static_cast<double>(n);
    }
  }
  fit.fitted_mu = Matrix(n, t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s)
      fit.fitted_mu(i, s) = row_mean[i] + col_mean[s] - grand;
  return fit;
}

}  // namespace npanel
