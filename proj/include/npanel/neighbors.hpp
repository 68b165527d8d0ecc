#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "npanel/dgp.hpp"
#include "npanel/matrix.hpp"
#include "npanel/panel.hpp"
#include "npanel/parallel.hpp"
#include "npanel/quadrature.hpp"

namespace npanel {

// ---------------------------------------------------------------------------
// Cross moments
// ---------------------------------------------------------------------------

/// Symmetric N x N matrix of time-averaged outcome products
/// G_ik = (1/T) sum_t Y_it Y_kt. Each unordered pair is accumulated once, in
/// ascending t with compensated summation, so G is bitwise reproducible for
/// any thread count.
struct CrossMomentMatrix {
  Matrix values;
  std::size_t n_units = 0;
  std::size_t n_periods = 0;

  double operator()(std::size_t i, std::size_t k) const { return values(i, k); }
};

inline CrossMomentMatrix cross_moments(const Panel& panel, unsigned threads = 0) {
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();
  CrossMomentMatrix gm;
  gm.values = Matrix(n, n);
  gm.n_units = n;
  gm.n_periods = t;
  const double inv_t = 1.0 / static_cast<double>(t);
  parallel_for(
      n,
      [&](std::size_t i) {
        const auto yi = panel.unit_row(i);
        for (std::size_t k = i; k < n; ++k) {
          const auto yk = panel.unit_row(k);
          KahanSum acc;
          for (std::size_t s = 0; s < t; ++s) acc.add(yi[s] * yk[s]);
          const double v = acc.value() * inv_t;
          gm.values(i, k) = v;
          gm.values(k, i) = v;
        }
      },
      threads);
  return gm;
}

/// L-infinity cross-moment discrepancy between units i and j:
/// max over k not in {i,j} of |G_ik - G_jk|. Algebraically equal to the
/// largest time-averaged |(1/T) sum_t (Y_it - Y_jt) Y_kt|.
inline double discrepancy(std::size_t i, std::size_t j, const CrossMomentMatrix& gm) {
  if (i == j) throw std::invalid_argument("discrepancy: i and j must differ");
  if (gm.n_units < 3)
    throw std::invalid_argument("discrepancy: need at least 3 units for a comparison");
  double best = 0.0;
  for (std::size_t k = 0; k < gm.n_units; ++k) {
    if (k == i || k == j) continue;
    const double d = std::fabs(gm(i, k) - gm(j, k));
    if (d > best) best = d;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Neighbor sets
// ---------------------------------------------------------------------------

enum class NeighborMode { prediction, causal };

enum class ExclusionReason {
  none,
  above_nu,
  insufficient_overlap,  // every comparison pair lacked control periods
};

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::none: return "none";
    case ExclusionReason::above_nu: return "above_nu";
    case ExclusionReason::insufficient_overlap: return "insufficient_overlap";
  }
  return "?";
}

struct CandidateStat {
  std::size_t unit = 0;
  double value = 0.0;
  /// True when the causal scan stopped early: `value` is then a certified
  /// lower bound already above the tolerance, not the exact statistic.
  bool lower_bound = false;
  ExclusionReason exclusion = ExclusionReason::none;
  std::uint64_t pairs_evaluated = 0;
  std::uint64_t pairs_skipped = 0;
};

struct NeighborSet {
  std::size_t center = 0;
  NeighborMode mode = NeighborMode::prediction;
  double nu = 0.0;
  std::vector<std::size_t> members;   // sorted ascending
  std::vector<CandidateStat> stats;   // one entry per candidate unit

  bool contains(std::size_t j) const {
    return std::binary_search(members.begin(), members.end(), j);
  }
  const CandidateStat* stat_for(std::size_t j) const {
    for (const auto& s : stats)
      if (s.unit == j) return &s;
    return nullptr;
  }
};

/// Prediction-mode neighbor set: every j with discrepancy(i,j) <= nu, plus
/// the center itself (its statistic is identically zero).
inline NeighborSet neighbor_set(std::size_t i, double nu, const CrossMomentMatrix& gm) {
  if (nu < 0.0) throw std::invalid_argument("neighbor_set: nu must be nonnegative");
  NeighborSet set;
  set.center = i;
  set.mode = NeighborMode::prediction;
  set.nu = nu;
  set.members.push_back(i);
  set.stats.push_back({i, 0.0, false, ExclusionReason::none, 0, 0});
  for (std::size_t j = 0; j < gm.n_units; ++j) {
    if (j == i) continue;
    const double d = discrepancy(i, j, gm);
    CandidateStat st{j, d, false, ExclusionReason::none, 0, 0};
    if (d <= nu)
      set.members.push_back(j);
    else
      st.exclusion = ExclusionReason::above_nu;
    set.stats.push_back(st);
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

// ---------------------------------------------------------------------------
// Control-period sets
// ---------------------------------------------------------------------------

struct ControlPeriodSet {
  std::vector<std::size_t> units;
  std::vector<std::size_t> periods;  // sorted; all listed units untreated
};

/// S(units): the periods in which every listed unit is in the control group.
inline ControlPeriodSet control_periods(std::span<const std::size_t> units,
                                        const TreatmentMask& mask) {
  if (units.empty())
    throw std::invalid_argument("control_periods: unit set must be nonempty");
  ControlPeriodSet s;
  s.units.assign(units.begin(), units.end());
  for (std::size_t t = 0; t < mask.n_periods(); ++t) {
    bool all_control = true;
    for (std::size_t u : units)
      if (mask.treated(u, t)) {
        all_control = false;
        break;
      }
    if (all_control) s.periods.push_back(t);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Causal discrepancy
// ---------------------------------------------------------------------------

struct CausalStat {
  /// Empty means insufficient overlap: every comparison pair's control-period
  /// set fell below s_min.
  std::optional<double> value;
  bool lower_bound = false;
  std::uint64_t pairs_evaluated = 0;
  std::uint64_t pairs_skipped = 0;
};

/// Shared machinery for the missing-data discrepancy
///   max over pairs {k,l} disjoint from {i,j}, k != l, of
///     |avg over S({i,j,k,l}) of (Y_it - Y_jt) Y_kt|
///   + |avg over S({i,j,k,l}) of (Y_it - Y_jt) Y_lt|
/// where S(set) collects the periods with every listed unit in control and
/// pairs with |S| < s_min are skipped and counted.
///
/// The scan works on the compressed grid of periods where i and j are both
/// in control. Per comparison unit u it holds the masked products
/// v_u[p] = (Y_i - Y_j)(Y_u) restricted to u's control periods, u's control
/// bitset, and u's treated/control position lists; a pair (k,l) then costs a
/// popcount for |S| plus one gather over the shorter of l's treated/control
/// lists. A prune threshold lets callers abandon a candidate as soon as the
/// running maximum exceeds it (the returned value is then a lower bound).
///
/// `include_center_in_s = false` drops unit i from every conditioning set;
/// the group-decomposition estimator uses this, since there the center's own
/// outcomes are never control observations at all.
class CausalScanner {
 public:
  CausalScanner(const Panel& panel, const TreatmentMask& mask, std::size_t s_min,
                bool include_center_in_s = true)
      : panel_(panel), mask_(mask), s_min_(s_min), include_center_(include_center_in_s) {
    if (!mask.matches(panel))
      throw std::invalid_argument("CausalScanner: mask does not match panel");
    if (panel.n_units() < 4)
      throw std::invalid_argument("CausalScanner: need at least 4 units");
    const std::size_t n = panel.n_units();
    const std::size_t t = panel.n_periods();
    control_count_.resize(n, 0);
    constant_rows_ = true;
    for (std::size_t u = 0; u < n; ++u) {
      std::size_t c = 0;
      for (std::size_t s = 0; s < t; ++s)
        if (!mask.treated(u, s)) ++c;
      control_count_[u] = c;
      if (c != 0 && c != t) constant_rows_ = false;
    }
    if (constant_rows_) gm_ = cross_moments(panel, 1);
  }

  std::size_t n_units() const { return panel_.n_units(); }
  bool all_rows_constant() const { return constant_rows_; }

  struct Workspace {
    std::vector<std::size_t> grid;       // panel time indices in the (i,j) grid
    std::vector<double> diff;            // Y_i - Y_j on the grid
    std::vector<std::size_t> live;       // candidate units with enough coverage
    std::vector<double> v;               // live x grid, masked products
    std::vector<double> total;           // per live unit, sum of its v row
    std::vector<std::uint64_t> words;    // live x n_words control bitsets
    std::vector<std::size_t> positions;  // CSR storage for treated/control lists
    std::vector<std::size_t> tr_begin, tr_end, ct_begin, ct_end;
    std::vector<std::size_t> order;      // scan order over live candidates
  };

  CausalStat statistic(std::size_t i, std::size_t j,
                       double prune_at = std::numeric_limits<double>::infinity()) const {
    Workspace ws;
    return statistic(i, j, ws, prune_at);
  }

  CausalStat statistic(std::size_t i, std::size_t j, Workspace& ws,
                       double prune_at = std::numeric_limits<double>::infinity()) const {
    if (i == j) throw std::invalid_argument("causal statistic: i and j must differ");
    const std::size_t n = panel_.n_units();
    const std::uint64_t all_pairs =
        static_cast<std::uint64_t>(n - 2) * static_cast<std::uint64_t>(n - 3) / 2;
    if (constant_rows_) return constant_row_statistic(i, j, all_pairs);

    build_grid(i, j, ws);
    const std::size_t len = ws.grid.size();
    CausalStat out;
    if (len < s_min_) {
      out.pairs_skipped = all_pairs;
      return out;
    }
    fill_candidates(i, j, ws);
    const std::size_t m = ws.live.size();
    const std::size_t n_words = (len + 63) / 64;

    // Scan order: largest single-unit averages first, so the maximum (or the
    // prune threshold) is reached after few pairs.
    ws.order.resize(m);
    for (std::size_t a = 0; a < m; ++a) ws.order[a] = a;
    std::sort(ws.order.begin(), ws.order.end(), [&](std::size_t a, std::size_t b) {
      const double pa = std::fabs(ws.total[a]), pb = std::fabs(ws.total[b]);
      if (pa != pb) return pa > pb;
      return ws.live[a] < ws.live[b];
    });

    double best = -1.0;
    out.pairs_skipped = all_pairs - static_cast<std::uint64_t>(m) * (m - 1) / 2;
    for (std::size_t a = 0; a < m && !(best > prune_at); ++a) {
      const std::size_t k = ws.order[a];
      const std::uint64_t* wk = ws.words.data() + k * n_words;
      const double* vk = ws.v.data() + k * len;
      for (std::size_t b = a + 1; b < m; ++b) {
        const std::size_t l = ws.order[b];
        const std::uint64_t* wl = ws.words.data() + l * n_words;
        std::size_t s_size = 0;
        for (std::size_t w = 0; w < n_words; ++w)
          s_size += static_cast<std::size_t>(std::popcount(wk[w] & wl[w]));
        if (s_size < s_min_) {
          ++out.pairs_skipped;
          continue;
        }
        ++out.pairs_evaluated;
        const double* vl = ws.v.data() + l * len;
        const double num_k = masked_sum(ws, k, l, vk);
        const double num_l = masked_sum(ws, l, k, vl);
        const double stat =
            (std::fabs(num_k) + std::fabs(num_l)) / static_cast<double>(s_size);
        if (stat > best) {
          best = stat;
          if (best > prune_at) break;
        }
      }
    }
    if (out.pairs_evaluated == 0) return out;  // insufficient overlap
    out.value = best;
    out.lower_bound = best > prune_at;
    return out;
  }

 private:
  // Sum of v_k over the control periods shared with l, via whichever of l's
  // treated/control position lists is shorter.
  double masked_sum(const Workspace& ws, std::size_t k, std::size_t l,
                    const double* vk) const {
    const std::size_t tr_len = ws.tr_end[l] - ws.tr_begin[l];
    const std::size_t ct_len = ws.ct_end[l] - ws.ct_begin[l];
    double s = 0.0;
    if (tr_len <= ct_len) {
      for (std::size_t p = ws.tr_begin[l]; p < ws.tr_end[l]; ++p)
        s += vk[ws.positions[p]];
      return ws.total[k] - s;
    }
    for (std::size_t p = ws.ct_begin[l]; p < ws.ct_end[l]; ++p)
      s += vk[ws.positions[p]];
    return s;
  }

  void build_grid(std::size_t i, std::size_t j, Workspace& ws) const {
    ws.grid.clear();
    ws.diff.clear();
    const auto yi = panel_.unit_row(i);
    const auto yj = panel_.unit_row(j);
    for (std::size_t t = 0; t < panel_.n_periods(); ++t) {
      if (mask_.treated(j, t)) continue;
      if (include_center_ && mask_.treated(i, t)) continue;
      ws.grid.push_back(t);
      ws.diff.push_back(yi[t] - yj[t]);
    }
  }

  void fill_candidates(std::size_t i, std::size_t j, Workspace& ws) const {
    const std::size_t n = panel_.n_units();
    const std::size_t len = ws.grid.size();
    const std::size_t n_words = (len + 63) / 64;
    ws.live.clear();
    for (std::size_t u = 0; u < n; ++u)
      if (u != i && u != j) ws.live.push_back(u);

    const std::size_t m = ws.live.size();
    ws.v.assign(m * len, 0.0);
    ws.total.assign(m, 0.0);
    ws.words.assign(m * n_words, 0);
    ws.positions.clear();
    ws.tr_begin.assign(m, 0);
    ws.tr_end.assign(m, 0);
    ws.ct_begin.assign(m, 0);
    ws.ct_end.assign(m, 0);

    std::vector<std::size_t> keep;
    keep.reserve(m);
    std::size_t slot = 0;
    for (std::size_t u : ws.live) {
      const auto yu = panel_.unit_row(u);
      double* vu = ws.v.data() + slot * len;
      std::uint64_t* wu = ws.words.data() + slot * n_words;
      ws.tr_begin[slot] = ws.positions.size();
      std::size_t ctrl = 0;
      for (std::size_t p = 0; p < len; ++p)
        if (mask_.treated(u, ws.grid[p])) ws.positions.push_back(p);
      ws.tr_end[slot] = ws.positions.size();
      ws.ct_begin[slot] = ws.positions.size();
      double tot = 0.0;
      for (std::size_t p = 0; p < len; ++p) {
        if (mask_.treated(u, ws.grid[p])) continue;
        ws.positions.push_back(p);
        wu[p >> 6] |= std::uint64_t{1} << (p & 63);
        const double val = ws.diff[p] * yu[ws.grid[p]];
        vu[p] = val;
        tot += val;
        ++ctrl;
      }
      ws.ct_end[slot] = ws.positions.size();
      ws.total[slot] = tot;
      // A unit covering fewer than s_min grid periods can never pass the
      // |S| >= s_min test; drop it here (its pairs stay counted as skipped).
      if (ctrl >= s_min_) {
        keep.push_back(slot);
      }
      ++slot;
    }
    if (keep.size() != m) {
      // Compact the live set in place, preserving index order.
      std::vector<std::size_t> live2;
      live2.reserve(keep.size());
      for (std::size_t src_pos = 0; src_pos < keep.size(); ++src_pos) {
        const std::size_t src = keep[src_pos];
        live2.push_back(ws.live[src]);
        if (src != src_pos) {
          std::copy(ws.v.begin() + src * len, ws.v.begin() + (src + 1) * len,
                    ws.v.begin() + src_pos * len);
          std::copy(ws.words.begin() + src * n_words,
                    ws.words.begin() + (src + 1) * n_words,
                    ws.words.begin() + src_pos * n_words);
          ws.total[src_pos] = ws.total[src];
          ws.tr_begin[src_pos] = ws.tr_begin[src];
          ws.tr_end[src_pos] = ws.tr_end[src];
          ws.ct_begin[src_pos] = ws.ct_begin[src];
          ws.ct_end[src_pos] = ws.ct_end[src];
        }
      }
      ws.live.swap(live2);
    }
  }

  // When every mask row is constant (all control or all treated), each
  // surviving conditioning set is the full period range and the statistic
  // collapses to the two largest |G_ik - G_jk| over control units; this also
  // makes the all-control case agree exactly with prediction-mode algebra.
  CausalStat constant_row_statistic(std::size_t i, std::size_t j,
                                    std::uint64_t all_pairs) const {
    CausalStat out;
    out.pairs_skipped = all_pairs;
    if (control_count_[j] == 0) return out;
    if (include_center_ && control_count_[i] == 0) return out;
    if (panel_.n_periods() < s_min_) return out;
    double top1 = -1.0, top2 = -1.0;
    std::size_t n_ctrl = 0;
    for (std::size_t k = 0; k < panel_.n_units(); ++k) {
      if (k == i || k == j || control_count_[k] == 0) continue;
      ++n_ctrl;
      const double d = std::fabs((*gm_)(i, k) - (*gm_)(j, k));
      if (d > top1) {
        top2 = top1;
        top1 = d;
      } else if (d > top2) {
        top2 = d;
      }
    }
    if (n_ctrl < 2) return out;
    out.pairs_evaluated = static_cast<std::uint64_t>(n_ctrl) * (n_ctrl - 1) / 2;
    out.pairs_skipped = all_pairs - out.pairs_evaluated;
    out.value = top1 + top2;
    return out;
  }

  const Panel& panel_;
  const TreatmentMask& mask_;
  std::size_t s_min_;
  bool include_center_;
  bool constant_rows_ = false;
  std::vector<std::size_t> control_count_;
  std::optional<CrossMomentMatrix> gm_;
};

inline constexpr std::size_t kDefaultSMin = 30;

/// One-off causal discrepancy. Loops should construct a CausalScanner once
/// and reuse it.
inline CausalStat causal_discrepancy(std::size_t i, std::size_t j, const Panel& panel,
                                     const TreatmentMask& mask,
                                     std::size_t s_min = kDefaultSMin) {
  CausalScanner scanner(panel, mask, s_min);
  return scanner.statistic(i, j);
}

/// Causal-mode neighbor set: every j != i whose causal discrepancy is <= nu.
/// The center is excluded; candidates without overlap are recorded as such.
inline NeighborSet causal_neighbor_set(std::size_t i, double nu, const Panel& panel,
                                       const TreatmentMask& mask,
                                       std::size_t s_min = kDefaultSMin) {
  if (nu < 0.0) throw std::invalid_argument("causal_neighbor_set: nu must be nonnegative");
  CausalScanner scanner(panel, mask, s_min);
  CausalScanner::Workspace ws;
  NeighborSet set;
  set.center = i;
  set.mode = NeighborMode::causal;
  set.nu = nu;
  for (std::size_t j = 0; j < panel.n_units(); ++j) {
    if (j == i) continue;
    const CausalStat st = scanner.statistic(i, j, ws, nu);
    CandidateStat cs{j, 0.0, st.lower_bound, ExclusionReason::none,
                     st.pairs_evaluated, st.pairs_skipped};
    if (!st.value) {
      cs.exclusion = ExclusionReason::insufficient_overlap;
      cs.value = std::numeric_limits<double>::quiet_NaN();
    } else {
      cs.value = *st.value;
      if (*st.value <= nu)
        set.members.push_back(j);
      else
        cs.exclusion = ExclusionReason::above_nu;
    }
    set.stats.push_back(cs);
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

// ---------------------------------------------------------------------------
// Tolerance policies
// ---------------------------------------------------------------------------

struct NuPolicy {
  enum class Kind { theory, k_nearest, quantile };
  Kind kind = Kind::k_nearest;
  double xi = 0.0;   // theory: nu = xi / 8
  std::size_t k = 0; // k_nearest
  double q = 0.5;    // quantile

  static NuPolicy theory(double xi) { return {Kind::theory, xi, 0, 0.0}; }
  static NuPolicy k_nearest(std::size_t k) { return {Kind::k_nearest, 0.0, k, 0.0}; }
  static NuPolicy quantile(double q) { return {Kind::quantile, 0.0, 0, q}; }

  /// Data-adaptive default: k-nearest with k = ceil(log N) + 4.
  static NuPolicy default_for(std::size_t n_units) {
    return k_nearest(static_cast<std::size_t>(
                         std::ceil(std::log(static_cast<double>(n_units)))) +
                     4);
  }

  bool known_in_advance() const { return kind == Kind::theory; }
};

/// Turns a vector of candidate discrepancies into a tolerance.
/// k_nearest returns the k-th smallest value (so at least k candidates
/// qualify); quantile uses the midpoint rule: the order statistic when
/// q*(n-1) is integral, else the midpoint of the two straddling values.
inline double adaptive_nu(std::span<const double> stats, const NuPolicy& policy) {
  switch (policy.kind) {
    case NuPolicy::Kind::theory:
      if (!(policy.xi > 0.0))
        throw std::invalid_argument("adaptive_nu: theory policy needs xi > 0");
      return policy.xi / 8.0;
    case NuPolicy::Kind::k_nearest: {
      if (policy.k == 0 || policy.k > stats.size())
        throw std::invalid_argument("adaptive_nu: k outside [1, #candidates]");
      std::vector<double> sorted(stats.begin(), stats.end());
      std::nth_element(sorted.begin(), sorted.begin() + (policy.k - 1), sorted.end());
      return sorted[policy.k - 1];
    }
    case NuPolicy::Kind::quantile: {
      if (stats.empty())
        throw std::invalid_argument("adaptive_nu: quantile of empty stats");
      if (!(policy.q >= 0.0 && policy.q <= 1.0))
        throw std::invalid_argument("adaptive_nu: quantile must lie in [0,1]");
      std::vector<double> sorted(stats.begin(), stats.end());
      std::sort(sorted.begin(), sorted.end());
      const double pos = policy.q * static_cast<double>(sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
      if (lo == hi) return sorted[lo];
      return 0.5 * (sorted[lo] + sorted[hi]);
    }
  }
  throw std::logic_error("adaptive_nu: unreachable");
}

// ---------------------------------------------------------------------------
// Population oracle (test support)
// ---------------------------------------------------------------------------

/// Population analogue of the neighbor construction, for scalar-latent
/// specs with a mu oracle: the grid values alpha' whose cross-moment
/// functionals against every probe value match those of alpha, i.e.
/// sup over alpha'' of |E_beta[(mu(alpha,.) - mu(alpha',.)) mu(alpha'',.)]|
/// <= tol. Expectations are taken by quadrature over the beta marginal.
inline std::vector<double> oracle_similar_alphas(const DgpSpec& spec, double alpha,
                                                 std::span<const double> alpha_grid,
                                                 std::size_t beta_nodes, double tol) {
  if (spec.d_alpha() != 1 || spec.d_beta() != 1)
    throw std::invalid_argument("oracle_similar_alphas: scalar latents required");
  const QuadratureRule rule = expectation_rule(spec.latents.beta, beta_nodes);
  const std::size_t g = alpha_grid.size();
  const std::size_t q = rule.nodes.size();

  // mu evaluated on grid x nodes, plus the query row.
  std::vector<double> mu_grid(g * q);
  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t s = 0; s < q; ++s)
      mu_grid[a * q + s] = mu_oracle(spec, alpha_grid[a], rule.nodes[s]);
  std::vector<double> mu_query(q);
  for (std::size_t s = 0; s < q; ++s)
    mu_query[s] = mu_oracle(spec, alpha, rule.nodes[s]);

  std::vector<double> accepted;
  std::vector<double> wdiff(q);
  for (std::size_t a = 0; a < g; ++a) {
    for (std::size_t s = 0; s < q; ++s)
      wdiff[s] = rule.weights[s] * (mu_query[s] - mu_grid[a * q + s]);
    double sup = 0.0;
    for (std::size_t probe = 0; probe < g && sup <= tol; ++probe) {
      double e = 0.0;
      const double* mp = mu_grid.data() + probe * q;
      for (std::size_t s = 0; s < q; ++s) e += wdiff[s] * mp[s];
      sup = std::max(sup, std::fabs(e));
    }
    if (sup <= tol) accepted.push_back(alpha_grid[a]);
  }
  return accepted;
}

/// Quadrature L2 distance E_beta[(mu(a,beta) - mu(a2,beta))^2].
inline double mu_l2_distance(const DgpSpec& spec, double a, double a2,
                             std::size_t beta_nodes = 257) {
  const QuadratureRule rule = expectation_rule(spec.latents.beta, beta_nodes);
  return rule.integrate([&](double b) {
    const double d = mu_oracle(spec, a, b) - mu_oracle(spec, a2, b);
    return d * d;
  });
}

}  // namespace npanel
