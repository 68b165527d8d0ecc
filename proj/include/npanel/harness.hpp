#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "npanel/baselines.hpp"
#include "npanel/dgp.hpp"
#include "npanel/estimation.hpp"
#include "npanel/neighbors.hpp"
#include "npanel/panel.hpp"
#include "npanel/parallel.hpp"
#include "npanel/quadrature.hpp"

namespace npanel {

// ---------------------------------------------------------------------------
// Minimum sample sizes for a target neighbor quality
// ---------------------------------------------------------------------------

struct RateBounds {
  std::int64_t n_min = 0;
  double t_min = 0.0;  // integral-valued; double because it overflows int64 fast
};

/// Minimum (N, T) so that, with probability at least 1 - delta_prob, every
/// accepted neighbor's conditional-mean L2 distance stays below xi:
///   N >= ln(delta*xi / (16 mu' mu)) / ln(1 - xi / (16 mu' mu)),
///   T >= 256 N^2 C_Y^2 / (delta^2 xi^2).
/// The constants are intentionally conservative; desk-scale checks use the
/// qualitative direction instead.
inline RateBounds rate_bounds(double xi, double delta_prob,
                              const TheoryConstants& constants) {
  constants.validate();
  const double cap = 16.0 * constants.mu_prime_bar * constants.mu_bar;
  if (!(delta_prob > 0.0 && delta_prob < 1.0))
    throw std::domain_error("rate_bounds: delta_prob must lie in (0,1)");
  if (!(xi > 0.0 && xi < cap))
    throw std::domain_error("rate_bounds: xi must lie in (0, 16*mu_bar*mu_prime_bar)");
  const double n_real = std::log(delta_prob * xi / cap) / std::log(1.0 - xi / cap);
  RateBounds r;
  r.n_min = static_cast<std::int64_t>(std::ceil(n_real));
  const double n = static_cast<double>(r.n_min);
  r.t_min = std::ceil(256.0 * n * n * constants.c_y * constants.c_y /
                      (delta_prob * delta_prob * xi * xi));
  return r;
}

// ---------------------------------------------------------------------------
// Neighbor quality against the latent truth
// ---------------------------------------------------------------------------

/// Fraction of accepted pairs (center i, member j != i) whose true
/// conditional-mean L2 distance E_beta[(mu(alpha_i,.) - mu(alpha_j,.))^2]
/// exceeds xi, the expectation taken by quadrature on the beta marginal.
/// Returns 0 when the sets contribute no pairs.
inline double neighbor_quality(const DgpSpec& spec, const Matrix& alpha,
                               std::span<const NeighborSet> sets, double xi,
                               std::size_t beta_nodes = 257) {
  if (spec.d_beta() != 1)
    throw std::invalid_argument("neighbor_quality: scalar beta required");
  if (spec.g.kind == GKind::custom && !spec.g.fn)
    throw std::invalid_argument("neighbor_quality: spec lacks a mu oracle");
  const QuadratureRule rule = expectation_rule(spec.latents.beta, beta_nodes);
  const std::size_t q = rule.nodes.size();

  // mu(alpha_u, node) rows, filled lazily per referenced unit.
  std::vector<std::vector<double>> mu_rows(alpha.rows());
  auto row_for = [&](std::size_t u) -> const std::vector<double>& {
    auto& r = mu_rows[u];
    if (r.empty()) {
      r.resize(q);
      for (std::size_t s = 0; s < q; ++s) {
        const double node = rule.nodes[s];
        r[s] = mu_oracle(spec, alpha.row(u), std::span<const double>(&node, 1));
      }
    }
    return r;
  };

  std::size_t total = 0, exceed = 0;
  for (const auto& set : sets) {
    const auto& mi = row_for(set.center);
    for (std::size_t j : set.members) {
      if (j == set.center) continue;
      const auto& mj = row_for(j);
      double l2 = 0.0;
      for (std::size_t s = 0; s < q; ++s) {
        const double d = mi[s] - mj[s];
        l2 += rule.weights[s] * d * d;
      }
      ++total;
      if (l2 > xi) ++exceed;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(exceed) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

struct McConfig {
  DgpSpec dgp;
  std::vector<std::pair<std::size_t, std::size_t>> grid;  // (N, T) points
  std::size_t replications = 1;
  std::vector<NuPolicy> policies = {NuPolicy{}};  // for the npm estimator
  std::vector<std::string> estimators = {"npm"};  // npm,row_mean,l2,ks,twfe
  std::uint64_t master_seed = 1;
  double quality_xi = 0.02;
  std::size_t s_min = kDefaultSMin;
  std::size_t matcher_k = 0;  // 0: ceil(log N) + 4
  unsigned threads = 0;       // replicate-level parallelism; 0 = hardware

  void validate() const {
    dgp.validate();
    if (grid.empty()) throw std::invalid_argument("mc: grid must be nonempty");
    if (replications == 0)
      throw std::invalid_argument("mc: replications must be at least 1");
    if (policies.empty()) throw std::invalid_argument("mc: need at least one policy");
    for (const auto& e : estimators)
      if (e != "npm" && e != "row_mean" && e != "l2" && e != "ks" && e != "twfe")
        throw std::invalid_argument("mc: unknown estimator " + e);
  }
};

inline std::string policy_label(const NuPolicy& p) {
  std::ostringstream os;
  switch (p.kind) {
    case NuPolicy::Kind::theory: os << "theory:" << p.xi; break;
    case NuPolicy::Kind::k_nearest:
      if (p.k == 0)
        os << "knn:auto";
      else
        os << "knn:" << p.k;
      break;
    case NuPolicy::Kind::quantile: os << "quantile:" << p.q; break;
  }
  return os.str();
}

struct EstimatorOutcome {
  std::string name;
  bool failed = false;
  std::string error;
  double tau_hat = std::numeric_limits<double>::quiet_NaN();
  double rmse_mu = std::numeric_limits<double>::quiet_NaN();
  double quality = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicateRecord {
  std::size_t n = 0, t = 0, rep = 0;
  std::uint64_t seed = 0;
  double true_att = 0.0;
  std::vector<EstimatorOutcome> outcomes;
};

struct McReportRow {
  std::size_t n = 0, t = 0;
  std::string estimator;
  double bias = std::numeric_limits<double>::quiet_NaN();
  double rmse_tau = std::numeric_limits<double>::quiet_NaN();
  double rmse_mu = std::numeric_limits<double>::quiet_NaN();
  double quality_freq = std::numeric_limits<double>::quiet_NaN();
  double runtime_ms = std::numeric_limits<double>::quiet_NaN();
  std::size_t failures = 0;
};

struct McReport {
  std::vector<McReportRow> rows;
  std::vector<ReplicateRecord> records;  // the archive: everything recomputable
};

namespace detail {

inline double rmse_vs_truth(const std::vector<ImputedCell>& cells, const Matrix& mu) {
  if (cells.empty()) return std::numeric_limits<double>::quiet_NaN();
  KahanSum acc;
  for (const auto& c : cells) {
    const double e = c.mu_hat - mu(c.cell.unit, c.cell.time);
    acc.add(e * e);
  }
  return std::sqrt(acc.value() / static_cast<double>(cells.size()));
}

/// Shared imputation scoring for the matching baselines: treated cells are
/// imputed by the average outcome of the matched units that are untreated in
/// that period.
inline EstimatorOutcome run_matcher(MatcherKind kind, const std::string& name,
                                    const SimulatedPanel& sim, std::size_t k,
                                    const DgpSpec& spec, double quality_xi) {
  EstimatorOutcome out;
  out.name = name;
  const Panel& panel = sim.panel;
  const std::size_t n = panel.n_units();
  const std::size_t t = panel.n_periods();

  std::vector<std::vector<std::size_t>> matches(n);
  std::vector<NeighborSet> as_sets;
  std::vector<ImputedCell> cells;
  KahanSum contrast;
  std::size_t imputed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool any_treated = false;
    for (std::size_t s = 0; s < t && !any_treated; ++s)
      any_treated = sim.mask.treated(i, s);
    if (!any_treated) continue;
    switch (kind) {
      case MatcherKind::row_mean: matches[i] = match_row_mean(i, panel, k); break;
      case MatcherKind::l2: matches[i] = match_l2(i, panel, k); break;
      case MatcherKind::ks: matches[i] = match_ks(i, panel, k); break;
      default: throw std::logic_error("run_matcher: not a matcher");
    }
    NeighborSet set;
    set.center = i;
    set.mode = NeighborMode::causal;
    set.members = matches[i];
    std::sort(set.members.begin(), set.members.end());
    as_sets.push_back(set);
    for (std::size_t s = 0; s < t; ++s) {
      if (!sim.mask.treated(i, s)) continue;
      KahanSum acc;
      std::size_t used = 0;
      for (std::size_t j : matches[i]) {
        if (sim.mask.treated(j, s)) continue;
        acc.add(panel(j, s));
        ++used;
      }
      if (used == 0) continue;
      const double mu_hat = acc.value() / static_cast<double>(used);
      cells.push_back({CellIndex{i, s}, panel(i, s), mu_hat, used, false});
      contrast.add(panel(i, s) - mu_hat);
      ++imputed;
    }
  }
  if (imputed == 0) {
    out.failed = true;
    out.error = "no imputable treated cell";
    return out;
  }
  out.tau_hat = contrast.value() / static_cast<double>(imputed);
  out.rmse_mu = rmse_vs_truth(cells, sim.mu);
  if (spec.d_beta() == 1)
    out.quality = neighbor_quality(spec, sim.truth.alpha, as_sets, quality_xi);
  return out;
}

inline EstimatorOutcome run_one_estimator(const std::string& label,
                                          const std::string& kind,
                                          const NuPolicy& policy,
                                          const SimulatedPanel& sim,
                                          const McConfig& config) {
  const std::size_t n = sim.panel.n_units();
  const std::size_t matcher_k =
      config.matcher_k != 0 ? config.matcher_k : NuPolicy::default_for(n).k;
  EstimatorOutcome out;
  out.name = label;
  try {
    if (kind == "npm") {
      AttOptions opt;
      opt.policy = policy;
      opt.s_min = config.s_min;
      opt.keep_sets = true;
      opt.threads = 1;
      const AttResult att = estimate_att(sim.panel, sim.mask, opt);
      out.tau_hat = att.tau_hat;
      out.rmse_mu = rmse_vs_truth(att.imputations, sim.mu);
      if (config.dgp.d_beta() == 1)
        out.quality =
            neighbor_quality(config.dgp, sim.truth.alpha, att.sets, config.quality_xi);
    } else if (kind == "twfe") {
      const TwoWayFit fit = twfe_fit(sim.panel, sim.mask);
      out.tau_hat = fit.tau_hat;
      std::vector<ImputedCell> cells;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t s = 0; s < sim.panel.n_periods(); ++s)
          if (sim.mask.treated(i, s))
            cells.push_back({CellIndex{i, s}, sim.panel(i, s), fit.fitted_mu(i, s), 0,
                             false});
      out.rmse_mu = rmse_vs_truth(cells, sim.mu);
    } else {
      const MatcherKind mk = kind == "row_mean" ? MatcherKind::row_mean
                             : kind == "l2"     ? MatcherKind::l2
                                                : MatcherKind::ks;
      out = run_matcher(mk, label, sim, matcher_k, config.dgp, config.quality_xi);
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    out.tau_hat = std::numeric_limits<double>::quiet_NaN();
    out.rmse_mu = std::numeric_limits<double>::quiet_NaN();
    out.quality = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace detail

/// Estimator labels in report order: npm expands over the configured
/// policies; baselines appear once each.
inline std::vector<std::pair<std::string, std::string>> estimator_plan(
    const McConfig& config) {
  std::vector<std::pair<std::string, std::string>> plan;  // (label, kind)
  for (const auto& est : config.estimators) {
    if (est == "npm") {
      if (config.policies.size() == 1) {
        plan.emplace_back("npm", "npm");
      } else {
        for (const auto& p : config.policies)
          plan.emplace_back("npm[" + policy_label(p) + "]", "npm");
      }
    } else {
      plan.emplace_back(est, est);
    }
  }
  return plan;
}

/// Aggregates archived records into report rows (runtime left NaN; wall time
/// is a measurement, not a statistic, and is reported separately by run_mc).
inline std::vector<McReportRow> aggregate_records(
    const McConfig& config, const std::vector<ReplicateRecord>& records) {
  const auto plan = estimator_plan(config);
  std::vector<McReportRow> rows;
  for (const auto& [gn, gt] : config.grid) {
    for (const auto& [label, kind] : plan) {
      McReportRow row;
      row.n = gn;
      row.t = gt;
      row.estimator = label;
      KahanSum err_sum, err_sq, mu_sum, q_sum;
      std::size_t ok = 0, mu_ok = 0, q_ok = 0;
      for (const auto& rec : records) {
        if (rec.n != gn || rec.t != gt) continue;
        for (const auto& o : rec.outcomes) {
          if (o.name != label) continue;
          if (o.failed) {
            ++row.failures;
            continue;
          }
          const double err = o.tau_hat - rec.true_att;
          err_sum.add(err);
          err_sq.add(err * err);
          ++ok;
          if (!std::isnan(o.rmse_mu)) {
            mu_sum.add(o.rmse_mu);
            ++mu_ok;
          }
          if (!std::isnan(o.quality)) {
            q_sum.add(o.quality);
            ++q_ok;
          }
        }
      }
      if (ok > 0) {
        row.bias = err_sum.value() / static_cast<double>(ok);
        row.rmse_tau = std::sqrt(err_sq.value() / static_cast<double>(ok));
      }
      if (mu_ok > 0) row.rmse_mu = mu_sum.value() / static_cast<double>(mu_ok);
      if (q_ok > 0) row.quality_freq = q_sum.value() / static_cast<double>(q_ok);
      rows.push_back(row);
    }
  }
  return rows;
}

/// Runs the full experiment. Replicate r at grid point (N,T) draws from the
/// substream (master_seed, "mc/NxT/rep r"), so the archive is identical for
/// any thread count and for repeated runs.
inline McReport run_mc(const McConfig& config) {
  config.validate();
  const auto plan = estimator_plan(config);

  struct Task {
    std::size_t grid_idx, rep;
  };
  std::vector<Task> tasks;
  for (std::size_t g = 0; g < config.grid.size(); ++g)
    for (std::size_t r = 0; r < config.replications; ++r) tasks.push_back({g, r});

  std::vector<ReplicateRecord> records(tasks.size());
  std::vector<std::vector<double>> elapsed(tasks.size());

  parallel_for(
      tasks.size(),
      [&](std::size_t idx) {
        const auto [g, r] = tasks[idx];
        const auto [gn, gt] = config.grid[g];
        const std::string label =
            "mc/" + std::to_string(gn) + "x" + std::to_string(gt) + "/rep" +
            std::to_string(r);
        const std::uint64_t seed =
            substream(config.master_seed, label).next_u64();
        ReplicateRecord rec;
        rec.n = gn;
        rec.t = gt;
        rec.rep = r;
        rec.seed = seed;
        const SimulatedPanel sim = simulate(config.dgp, gn, gt, seed);
        rec.true_att = sim.true_att;
        auto& ms = elapsed[idx];
        std::size_t pol = 0;
        for (const auto& [lbl, kind] : plan) {
          const NuPolicy policy =
              kind == "npm"
                  ? config.policies[config.policies.size() == 1 ? 0 : pol++]
                  : NuPolicy{};
          const auto t0 = std::chrono::steady_clock::now();
          rec.outcomes.push_back(
              detail::run_one_estimator(lbl, kind, policy, sim, config));
          const auto t1 = std::chrono::steady_clock::now();
          ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        records[idx] = std::move(rec);
      },
      config.threads);

  McReport report;
  report.records = std::move(records);
  report.rows = aggregate_records(config, report.records);

  // Attach mean wall time per (grid, estimator).
  for (auto& row : report.rows) {
    KahanSum acc;
    std::size_t cnt = 0;
    for (std::size_t idx = 0; idx < tasks.size(); ++idx) {
      const auto [gn, gt] = config.grid[tasks[idx].grid_idx];
      if (gn != row.n || gt != row.t) continue;
      for (std::size_t e = 0; e < plan.size(); ++e)
        if (plan[e].first == row.estimator) {
          acc.add(elapsed[idx][e]);
          ++cnt;
        }
    }
    if (cnt > 0) row.runtime_ms = acc.value() / static_cast<double>(cnt);
  }
  return report;
}

/// TSV table of the report rows, sorted by N then T (then estimator label);
/// plain %.17g numbers, no locale formatting.
inline std::string convergence_table(const McReport& report) {
  std::vector<McReportRow> rows = report.rows;
  std::sort(rows.begin(), rows.end(), [](const McReportRow& a, const McReportRow& b) {
    if (a.n != b.n) return a.n < b.n;
    if (a.t != b.t) return a.t < b.t;
    return a.estimator < b.estimator;
  });
  std::string out = "n\tt\testimator\tbias\trmse_tau\trmse_mu\tquality_freq\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%s\t%.17g\t%.17g\t%.17g\t%.17g\n", r.n,
                  r.t, r.estimator.c_str(), r.bias, r.rmse_tau, r.rmse_mu,
                  r.quality_freq);
    out += buf;
  }
  return out;
}

/// Recomputes every report figure from the archived records and compares.
/// Runtime is excluded by construction (not recomputable from the archive).
inline bool verify_report(const McConfig& config, const McReport& report,
                          std::string* diff = nullptr) {
  const auto rows = aggregate_records(config, report.records);
  if (rows.size() != report.rows.size()) {
    if (diff) *diff = "row count mismatch";
    return false;
  }
  auto same = [](double a, double b) {
    return (std::isnan(a) && std::isnan(b)) || a == b;
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = report.rows[i];
    if (a.n != b.n || a.t != b.t || a.estimator != b.estimator ||
        !same(a.bias, b.bias) || !same(a.rmse_tau, b.rmse_tau) ||
        !same(a.rmse_mu, b.rmse_mu) || !same(a.quality_freq, b.quality_freq) ||
        a.failures != b.failures) {
      if (diff)
        *diff = "mismatch at row " + std::to_string(i) + " (" + a.estimator + ")";
      return false;
    }
  }
  return true;
}

}  // namespace npanel
