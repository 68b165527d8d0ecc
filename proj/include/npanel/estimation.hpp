#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "npanel/matrix.hpp"
#include "npanel/neighbors.hpp"
#include "npanel/panel.hpp"
#include "npanel/parallel.hpp"

namespace npanel {

// ---------------------------------------------------------------------------
// Cell imputation
// ---------------------------------------------------------------------------

struct ImputedCell {
  CellIndex cell;
  double y_observed = 0.0;
  double mu_hat = 0.0;
  std::size_t n_neighbors = 0;  // outcomes actually averaged
  bool forced_1nn = false;      // fell back to the closest admissible unit
};

struct ImputationValue {
  double mu_hat = 0.0;
  std::size_t n_used = 0;
  bool forced_1nn = false;
};

namespace detail {

/// Mean of Y_jt over the admissible members of jset at the cell's period.
/// Admissible: untreated at t (when a mask is given) and never the center
/// itself in causal mode / leave-self-out prediction averaging. When no
/// member qualifies and fallback is allowed, uses the single admissible
/// candidate with the smallest recorded statistic (exact statistics ranked
/// ahead of pruned lower bounds).
inline std::optional<ImputationValue> impute_cell_impl(CellIndex cell,
                                                       const NeighborSet& jset,
                                                       const Panel& panel,
                                                       const TreatmentMask* mask,
                                                       bool allow_fallback) {
  const std::size_t t = cell.time;
  KahanSum sum;
  std::size_t used = 0;
  for (std::size_t j : jset.members) {
    if (j == cell.unit) continue;
    if (mask != nullptr && mask->treated(j, t)) continue;
    sum.add(panel(j, t));
    ++used;
  }
  if (used > 0)
    return ImputationValue{sum.value() / static_cast<double>(used), used, false};
  if (!allow_fallback) return std::nullopt;

  // Forced 1-NN: smallest-statistic admissible candidate.
  const CandidateStat* best = nullptr;
  for (const auto& st : jset.stats) {
    if (st.unit == cell.unit) continue;
    if (st.exclusion == ExclusionReason::insufficient_overlap) continue;
    if (mask != nullptr && mask->treated(st.unit, t)) continue;
    if (best == nullptr || std::make_pair(st.lower_bound, st.value) <
                               std::make_pair(best->lower_bound, best->value))
      best = &st;
  }
  if (best == nullptr) return std::nullopt;
  return ImputationValue{panel(best->unit, t), 1, true};
}

}  // namespace detail

/// Spec'd single-cell operation. Throws when nothing is admissible.
inline ImputationValue impute_cell(CellIndex cell, const NeighborSet& jset,
                                   const Panel& panel, const TreatmentMask* mask,
                                   bool allow_fallback = true) {
  if (jset.center != cell.unit)
    throw std::invalid_argument("impute_cell: neighbor set is for a different unit");
  auto v = detail::impute_cell_impl(cell, jset, panel, mask, allow_fallback);
  if (!v)
    throw std::runtime_error("impute_cell: no admissible control outcome for cell (" +
                             std::to_string(cell.unit) + "," + std::to_string(cell.time) +
                             ")");
  return *v;
}

// ---------------------------------------------------------------------------
// Adaptive neighbor-set construction
// ---------------------------------------------------------------------------

namespace detail {

/// Builds the causal neighbor set for one center under a tolerance policy,
/// pruning candidate scans against the best tolerance known so far. For
/// k-nearest the prune threshold is the running k-th smallest exact
/// statistic, which only decreases, so pruned candidates can never belong to
/// the final set.
inline NeighborSet adaptive_causal_set(const CausalScanner& scanner,
                                       CausalScanner::Workspace& ws, std::size_t center,
                                       const NuPolicy& policy) {
  const std::size_t n = scanner.n_units();
  NeighborSet set;
  set.center = center;
  set.mode = NeighborMode::causal;

  double prune = std::numeric_limits<double>::infinity();
  if (policy.kind == NuPolicy::Kind::theory) prune = policy.xi / 8.0;
  // Running k-th smallest for k-nearest pruning.
  std::vector<double> top;  // max-heap of the k smallest exact stats

  for (std::size_t j = 0; j < n; ++j) {
    if (j == center) continue;
    const CausalStat st = scanner.statistic(center, j, ws, prune);
    CandidateStat cs{j, std::numeric_limits<double>::quiet_NaN(), st.lower_bound,
                     ExclusionReason::none, st.pairs_evaluated, st.pairs_skipped};
    if (!st.value) {
      cs.exclusion = ExclusionReason::insufficient_overlap;
    } else {
      cs.value = *st.value;
      if (policy.kind == NuPolicy::Kind::k_nearest && !st.lower_bound) {
        if (top.size() < policy.k) {
          top.push_back(cs.value);
          std::push_heap(top.begin(), top.end());
          if (top.size() == policy.k) prune = top.front();
        } else if (cs.value < top.front()) {
          std::pop_heap(top.begin(), top.end());
          top.back() = cs.value;
          std::push_heap(top.begin(), top.end());
          prune = top.front();
        }
      }
    }
    set.stats.push_back(cs);
  }

  // Tolerance from the collected exact statistics.
  std::vector<double> exact;
  exact.reserve(set.stats.size());
  for (const auto& s : set.stats)
    if (s.exclusion != ExclusionReason::insufficient_overlap && !s.lower_bound)
      exact.push_back(s.value);

  if (exact.empty()) {
    set.nu = std::numeric_limits<double>::quiet_NaN();
    return set;  // no usable candidate at all
  }
  switch (policy.kind) {
    case NuPolicy::Kind::theory:
      set.nu = policy.xi / 8.0;
      break;
    case NuPolicy::Kind::k_nearest: {
      NuPolicy eff = policy;
      eff.k = std::min(policy.k, exact.size());
      set.nu = adaptive_nu(exact, eff);
      break;
    }
    case NuPolicy::Kind::quantile:
      set.nu = adaptive_nu(exact, policy);
      break;
  }
  for (auto& s : set.stats) {
    if (s.exclusion == ExclusionReason::insufficient_overlap) continue;
    if (!s.lower_bound && s.value <= set.nu)
      set.members.push_back(s.unit);
    else
      s.exclusion = ExclusionReason::above_nu;
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ATT estimation
// ---------------------------------------------------------------------------

struct AttResult {
  double tau_hat = 0.0;
  std::vector<ImputedCell> imputations;      // one per imputed treated cell
  std::vector<CellIndex> unimputable_cells;  // no control outcome available
  std::vector<double> nu_by_unit;            // NaN for units without treated cells
  std::vector<NeighborSet> sets;             // populated when options.keep_sets
  std::size_t forced_1nn_count = 0;
  std::uint64_t pairs_evaluated = 0;
  std::uint64_t pairs_skipped = 0;
  std::size_t n_treated_cells = 0;

  double skipped_pair_rate() const {
    const double tot = static_cast<double>(pairs_evaluated + pairs_skipped);
    return tot == 0.0 ? 0.0 : static_cast<double>(pairs_skipped) / tot;
  }
};

struct AttOptions {
  NuPolicy policy;             // defaulted to k-nearest(ceil(log N) + 4) when k == 0
  std::size_t s_min = kDefaultSMin;
  bool allow_fallback = true;  // forced 1-NN for cells with no qualifying member
  bool keep_sets = false;      // retain per-unit neighbor sets in the result
  unsigned threads = 1;
};

/// The treated-cell counterfactual estimator: causal neighbor sets per
/// treated unit (computed once per unit), unweighted imputation of every
/// treated cell from untreated members, and the average treatment contrast.
/// Deterministic given inputs; thread count only affects wall time.
inline AttResult estimate_att(const Panel& panel, const TreatmentMask& mask,
                              AttOptions options = {}) {
  if (!mask.matches(panel))
    throw std::invalid_argument("estimate_att: mask does not match panel");
  if (panel.n_units() < 4)
    throw std::invalid_argument("estimate_att: need at least 4 units");
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();

  NuPolicy policy = options.policy;
  if (policy.kind == NuPolicy::Kind::k_nearest && policy.k == 0)
    policy = NuPolicy::default_for(n);

  std::vector<std::size_t> treated_units;
  std::size_t n_treated_cells = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t s = 0; s < t; ++s)
      if (mask.treated(i, s)) ++c;
    if (c > 0) treated_units.push_back(i);
    n_treated_cells += c;
  }
  if (n_treated_cells == 0)
    throw std::invalid_argument("estimate_att: no treated cells");
  if (n_treated_cells == n * t)
    throw std::invalid_argument("estimate_att: no control observations");

  CausalScanner scanner(panel, mask, options.s_min);
  std::vector<NeighborSet> sets(treated_units.size());
  parallel_for(
      treated_units.size(),
      [&](std::size_t idx) {
        CausalScanner::Workspace ws;
        sets[idx] = detail::adaptive_causal_set(scanner, ws, treated_units[idx], policy);
      },
      options.threads);

  AttResult result;
  result.n_treated_cells = n_treated_cells;
  result.nu_by_unit.assign(n, std::numeric_limits<double>::quiet_NaN());

  KahanSum contrast;
  std::size_t imputed = 0;
  for (std::size_t idx = 0; idx < treated_units.size(); ++idx) {
    const std::size_t i = treated_units[idx];
    const NeighborSet& jset = sets[idx];
    result.nu_by_unit[i] = jset.nu;
    result.pairs_evaluated += std::accumulate(
        jset.stats.begin(), jset.stats.end(), std::uint64_t{0},
        [](std::uint64_t a, const CandidateStat& s) { return a + s.pairs_evaluated; });
    result.pairs_skipped += std::accumulate(
        jset.stats.begin(), jset.stats.end(), std::uint64_t{0},
        [](std::uint64_t a, const CandidateStat& s) { return a + s.pairs_skipped; });
    for (std::size_t s = 0; s < t; ++s) {
      if (!mask.treated(i, s)) continue;
      const CellIndex cell{i, s};
      auto v = detail::impute_cell_impl(cell, jset, panel, &mask, options.allow_fallback);
      if (!v) {
        result.unimputable_cells.push_back(cell);
        continue;
      }
      if (v->forced_1nn) ++result.forced_1nn_count;
      result.imputations.push_back(
          {cell, panel(i, s), v->mu_hat, v->n_used, v->forced_1nn});
      contrast.add(panel(i, s) - v->mu_hat);
      ++imputed;
    }
  }
  if (imputed == 0)
    throw std::runtime_error("estimate_att: every treated cell is unimputable");
  result.tau_hat = contrast.value() / static_cast<double>(imputed);
  if (options.keep_sets) result.sets = std::move(sets);
  return result;
}

// ---------------------------------------------------------------------------
// Full-matrix prediction
// ---------------------------------------------------------------------------

struct MuPrediction {
  Matrix mu_hat;                        // N x T
  std::vector<std::size_t> n_neighbors; // per unit (sets are per unit)
  std::vector<double> nu_by_unit;
};

/// Leave-self-out conditional-mean prediction on a fully observed panel:
/// each cell is the average outcome of the unit's prediction-mode neighbors,
/// the center excluded from the average despite belonging to its own set.
inline MuPrediction predict_mu_matrix(const Panel& panel, NuPolicy policy = {},
                                      unsigned threads = 1) {
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();
  if (n < 3) throw std::invalid_argument("predict_mu_matrix: need at least 3 units");
  if (policy.kind == NuPolicy::Kind::k_nearest && policy.k == 0)
    policy = NuPolicy::default_for(n);

  const CrossMomentMatrix gm = cross_moments(panel, threads);
  MuPrediction out;
  out.mu_hat = Matrix(n, t);
  out.n_neighbors.assign(n, 0);
  out.nu_by_unit.assign(n, 0.0);

  parallel_for(
      n,
      [&](std::size_t i) {
        std::vector<double> stats;
        stats.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) stats.push_back(discrepancy(i, j, gm));
        NuPolicy eff = policy;
        if (eff.kind == NuPolicy::Kind::k_nearest)
          eff.k = std::min(eff.k, stats.size());
        const double nu = adaptive_nu(stats, eff);
        out.nu_by_unit[i] = nu;

        std::vector<std::size_t> members;
        std::size_t sidx = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          if (stats[sidx++] <= nu) members.push_back(j);
        }
        if (members.empty())
          throw std::runtime_error("predict_mu_matrix: tolerance admits no neighbor");
        out.n_neighbors[i] = members.size();
        const double inv = 1.0 / static_cast<double>(members.size());
        for (std::size_t s = 0; s < t; ++s) {
          KahanSum acc;
          for (std::size_t j : members) acc.add(panel(j, s));
          out.mu_hat(i, s) = acc.value() * inv;
        }
      },
      threads);
  return out;
}

// ---------------------------------------------------------------------------
// Group decomposition
// ---------------------------------------------------------------------------

struct DecompositionResult {
  double total_gap = 0.0;
  double unexplained = 0.0;
  double explained = 0.0;  // == total_gap - unexplained, exactly
  double counterfactual_mean = 0.0;
  std::size_t n_group0 = 0;
  std::size_t n_group1 = 0;
};

namespace detail {

inline double cell_mean(const Panel& p) {
  KahanSum acc;
  for (std::size_t i = 0; i < p.n_units(); ++i)
    for (std::size_t s = 0; s < p.n_periods(); ++s) acc.add(p(i, s));
  return acc.value() / static_cast<double>(p.n_units() * p.n_periods());
}

}  // namespace detail

/// Mean-outcome gap between two groups split into the part attributable to
/// different outcome functions (unexplained) and different latent
/// compositions (explained). Group-1 cells are imputed under the group-0
/// outcome function by reusing the causal machinery with group membership as
/// the mask; the center is dropped from every conditioning set since group-1
/// outcomes are never group-0 control observations.
inline DecompositionResult decompose(const Panel& panel0, const Panel& panel1,
                                     NuPolicy policy = {},
                                     std::size_t s_min = kDefaultSMin,
                                     unsigned threads = 1) {
  if (panel0.n_periods() != panel1.n_periods())
    throw std::invalid_argument("decompose: panels must share the time grid");
  if (panel0.time_ids() != panel1.time_ids())
    throw std::invalid_argument("decompose: panels must share time identifiers");
  const std::size_t n0 = panel0.n_units();
  const std::size_t n1 = panel1.n_units();
  const std::size_t t = panel0.n_periods();
  if (n0 < 2 || n1 < 2)
    throw std::invalid_argument("decompose: each group needs at least 2 units");
  if (policy.kind == NuPolicy::Kind::k_nearest && policy.k == 0)
    policy = NuPolicy::default_for(n0);

  // Stack the groups; group 1 is "missing" for group-0-function purposes.
  Matrix stacked(n0 + n1, t);
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t s = 0; s < t; ++s) stacked(i, s) = panel0(i, s);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t s = 0; s < t; ++s) stacked(n0 + i, s) = panel1(i, s);
  Panel all(std::move(stacked));
  TreatmentMask group(n0 + n1, t);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t s = 0; s < t; ++s) group.set(n0 + i, s, true);

  CausalScanner scanner(all, group, s_min, /*include_center_in_s=*/false);
  std::vector<NeighborSet> sets(n1);
  parallel_for(
      n1,
      [&](std::size_t idx) {
        CausalScanner::Workspace ws;
        sets[idx] = detail::adaptive_causal_set(scanner, ws, n0 + idx, policy);
      },
      threads);

  std::vector<std::size_t> failed;
  for (std::size_t idx = 0; idx < n1; ++idx)
    if (sets[idx].members.empty()) failed.push_back(idx);
  if (!failed.empty()) {
    std::string msg = "decompose: no group-0 neighbors for group-1 unit(s)";
    for (std::size_t idx : failed) msg += " " + panel1.unit_ids()[idx];
    throw std::runtime_error(msg);
  }

  KahanSum cf;
  for (std::size_t idx = 0; idx < n1; ++idx) {
    const NeighborSet& jset = sets[idx];
    const double inv = 1.0 / static_cast<double>(jset.members.size());
    for (std::size_t s = 0; s < t; ++s) {
      KahanSum acc;
      for (std::size_t j : jset.members) acc.add(all(j, s));
      cf.add(acc.value() * inv);
    }
  }

  DecompositionResult r;
  r.n_group0 = n0;
  r.n_group1 = n1;
  r.counterfactual_mean = cf.value() / static_cast<double>(n1 * t);
  const double m0 = detail::cell_mean(panel0);
  const double m1 = detail::cell_mean(panel1);
  r.total_gap = m1 - m0;
  r.unexplained = m1 - r.counterfactual_mean;
  // The identity total = unexplained + explained is kept exact by deriving
  // the explained part; it equals counterfactual_mean - m0 up to rounding.
  r.explained = r.total_gap - r.unexplained;
  return r;
}

}  // namespace npanel
