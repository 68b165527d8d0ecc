#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "npanel/dgp.hpp"
#include "npanel/estimation.hpp"
#include "npanel/harness.hpp"
#include "npanel/neighbors.hpp"

namespace npanel {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// DgpSpec <-> JSON (built-in outcome functions only; a custom g carries a
// function handle and is rejected on serialization)
// ---------------------------------------------------------------------------

inline std::string to_string(MarginalKind k) {
  return k == MarginalKind::uniform01 ? "uniform" : "normal";
}
inline MarginalKind marginal_from_string(const std::string& s) {
  if (s == "uniform") return MarginalKind::uniform01;
  if (s == "normal") return MarginalKind::standard_normal;
  throw std::invalid_argument("unknown marginal '" + s + "' (uniform|normal)");
}

inline GKind gkind_from_string(const std::string& s) {
  if (s == "twfe") return GKind::twfe;
  if (s == "linear_factor") return GKind::linear_factor;
  if (s == "sign_flip") return GKind::sign_flip;
  if (s == "scale_noise") return GKind::scale_noise;
  if (s == "symmetric_square") return GKind::symmetric_square;
  throw std::invalid_argument("unknown g kind '" + s + "'");
}

inline json to_json(const AssignmentSpec& a) {
  switch (a.kind) {
    case AssignmentSpec::Kind::uniform:
      return {{"kind", "uniform"}, {"p", a.p}};
    case AssignmentSpec::Kind::confounded_logistic:
      return {{"kind", "confounded_logistic"}, {"a", a.a}, {"b", a.b},
              {"clamp", a.clamp}};
    case AssignmentSpec::Kind::block:
      return {{"kind", "block"}, {"clamp", a.clamp}};
  }
  throw std::logic_error("assignment kind");
}

inline AssignmentSpec assignment_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") return AssignmentSpec::uniform(j.at("p").get<double>());
  if (kind == "confounded_logistic")
    return AssignmentSpec::confounded_logistic(j.at("a").get<double>(),
                                               j.at("b").get<double>(),
                                               j.at("clamp").get<double>());
  if (kind == "block") return AssignmentSpec::block(j.at("clamp").get<double>());
  throw std::invalid_argument("unknown assignment kind '" + kind + "'");
}

inline json to_json(const DgpSpec& spec) {
  if (spec.g.kind == GKind::custom)
    throw std::invalid_argument("DgpSpec with custom g is not serializable");
  json g{{"kind", to_string(spec.g.kind)}, {"noise_scale", spec.g.noise_scale}};
  if (spec.g.kind == GKind::linear_factor) g["rank"] = spec.g.rank;
  json effect;
  switch (spec.effect.kind) {
    case EffectSpec::Kind::none: effect = {{"kind", "none"}}; break;
    case EffectSpec::Kind::constant:
      effect = {{"kind", "constant"}, {"tau", spec.effect.tau}};
      break;
    case EffectSpec::Kind::cell_function:
      throw std::invalid_argument("cell-function effects are not serializable");
  }
  return {{"g", g},
          {"latents",
           {{"alpha", to_string(spec.latents.alpha)},
            {"beta", to_string(spec.latents.beta)},
            {"epsilon", to_string(spec.latents.epsilon)}}},
          {"time_autocorr", {{"beta", spec.rho_beta}, {"epsilon", spec.rho_eps}}},
          {"assignment", to_json(spec.assignment)},
          {"effect", effect}};
}

inline DgpSpec dgp_from_json(const json& j) {
  DgpSpec spec;
  const json& g = j.at("g");
  spec.g.kind = gkind_from_string(g.at("kind").get<std::string>());
  spec.g = GSpec::builtin(spec.g.kind,
                          g.contains("noise_scale") ? g.at("noise_scale").get<double>()
                                                    : -1.0,
                          g.contains("rank") ? g.at("rank").get<std::size_t>() : 1);
  if (j.contains("latents")) {
    const json& l = j.at("latents");
    if (l.contains("alpha"))
      spec.latents.alpha = marginal_from_string(l.at("alpha").get<std::string>());
    if (l.contains("beta"))
      spec.latents.beta = marginal_from_string(l.at("beta").get<std::string>());
    if (l.contains("epsilon"))
      spec.latents.epsilon = marginal_from_string(l.at("epsilon").get<std::string>());
  }
  if (j.contains("time_autocorr")) {
    const json& a = j.at("time_autocorr");
    if (a.contains("beta")) spec.rho_beta = a.at("beta").get<double>();
    if (a.contains("epsilon")) spec.rho_eps = a.at("epsilon").get<double>();
  }
  if (j.contains("assignment")) spec.assignment = assignment_from_json(j.at("assignment"));
  if (j.contains("effect")) {
    const json& e = j.at("effect");
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "none")
      spec.effect = EffectSpec::none();
    else if (kind == "constant")
      spec.effect = EffectSpec::constant(e.at("tau").get<double>());
    else
      throw std::invalid_argument("unknown effect kind '" + kind + "'");
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Nu policies ("theory:XI" | "knn:K" | "quantile:Q")
// ---------------------------------------------------------------------------

inline NuPolicy policy_from_string(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("policy must look like theory:XI, knn:K or quantile:Q");
  const std::string kind = s.substr(0, colon);
  const std::string arg = s.substr(colon + 1);
  if (kind == "theory") return NuPolicy::theory(std::stod(arg));
  if (kind == "knn")
    return NuPolicy::k_nearest(arg == "auto" ? 0 : std::stoul(arg));
  if (kind == "quantile") return NuPolicy::quantile(std::stod(arg));
  throw std::invalid_argument("unknown policy kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Matrices and truth sidecar
// ---------------------------------------------------------------------------

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) rows.push_back(r.get<std::vector<double>>());
  return Matrix::from_rows(rows);
}

/// Sidecar with everything the harness needs to score an estimate.
inline json truth_to_json(const SimulatedPanel& sim, const DgpSpec& spec,
                          std::uint64_t seed) {
  json eps = json::array();
  for (const auto& comp : sim.truth.epsilon) eps.push_back(to_json(comp));
  return {{"spec", to_json(spec)},
          {"seed", seed},
          {"alpha", to_json(sim.truth.alpha)},
          {"beta", to_json(sim.truth.beta)},
          {"epsilon", eps},
          {"mu", to_json(sim.mu)},
          {"true_att", sim.true_att}};
}

// ---------------------------------------------------------------------------
// Neighbor sets
// ---------------------------------------------------------------------------

inline json to_json(const NeighborSet& set) {
  json stats = json::array();
  for (const auto& s : set.stats) {
    json e{{"unit", s.unit},
           {"value", s.value},
           {"exclusion", to_string(s.exclusion)}};
    if (s.lower_bound) e["lower_bound"] = true;
    if (s.pairs_evaluated + s.pairs_skipped > 0) {
      e["pairs_evaluated"] = s.pairs_evaluated;
      e["pairs_skipped"] = s.pairs_skipped;
    }
    stats.push_back(std::move(e));
  }
  return {{"center", set.center},
          {"mode", set.mode == NeighborMode::prediction ? "prediction" : "causal"},
          {"nu", set.nu},
          {"members", set.members},
          {"stats", stats}};
}

// ---------------------------------------------------------------------------
// Estimation results
// ---------------------------------------------------------------------------

inline json to_json(const AttResult& r) {
  json cells = json::array();
  for (const auto& c : r.imputations) {
    cells.push_back({{"unit", c.cell.unit},
                     {"time", c.cell.time},
                     {"y_obs", c.y_observed},
                     {"mu_hat", c.mu_hat},
                     {"n_neighbors", c.n_neighbors},
                     {"forced_1nn", c.forced_1nn}});
  }
  json unimputable = json::array();
  for (const auto& c : r.unimputable_cells)
    unimputable.push_back({{"unit", c.unit}, {"time", c.time}});
  return {{"tau_hat", r.tau_hat},
          {"n_treated_cells", r.n_treated_cells},
          {"diagnostics",
           {{"forced_1nn_count", r.forced_1nn_count},
            {"skipped_pair_rate", r.skipped_pair_rate()},
            {"pairs_evaluated", r.pairs_evaluated},
            {"pairs_skipped", r.pairs_skipped},
            {"nu_by_unit", r.nu_by_unit},
            {"unimputable_cells", unimputable}}},
          {"cells", cells}};
}

inline json to_json(const DecompositionResult& r) {
  return {{"total_gap", r.total_gap},
          {"unexplained", r.unexplained},
          {"explained", r.explained},
          {"counterfactual_mean", r.counterfactual_mean},
          {"n_group0", r.n_group0},
          {"n_group1", r.n_group1}};
}

inline json to_json(const RateBounds& r) {
  return {{"n_min", r.n_min}, {"t_min", r.t_min}};
}

// ---------------------------------------------------------------------------
// Monte Carlo config / report / archive
// ---------------------------------------------------------------------------

inline json to_json(const McConfig& c) {
  json grid = json::array();
  for (const auto& [n, t] : c.grid) grid.push_back({n, t});
  json policies = json::array();
  for (const auto& p : c.policies) policies.push_back(policy_label(p));
  return {{"dgp", to_json(c.dgp)},
          {"grid", grid},
          {"replications", c.replications},
          {"policies", policies},
          {"estimators", c.estimators},
          {"master_seed", c.master_seed},
          {"quality_xi", c.quality_xi},
          {"s_min", c.s_min},
          {"matcher_k", c.matcher_k}};
}

inline McConfig mc_config_from_json(const json& j) {
  McConfig c;
  c.dgp = dgp_from_json(j.at("dgp"));
  for (const auto& g : j.at("grid"))
    c.grid.emplace_back(g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>());
  c.replications = j.at("replications").get<std::size_t>();
  if (j.contains("policies")) {
    c.policies.clear();
    for (const auto& p : j.at("policies"))
      c.policies.push_back(policy_from_string(p.get<std::string>()));
  }
  if (j.contains("estimators"))
    c.estimators = j.at("estimators").get<std::vector<std::string>>();
  c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("quality_xi")) c.quality_xi = j.at("quality_xi").get<double>();
  if (j.contains("s_min")) c.s_min = j.at("s_min").get<std::size_t>();
  if (j.contains("matcher_k")) c.matcher_k = j.at("matcher_k").get<std::size_t>();
  c.validate();
  return c;
}

inline json to_json(const ReplicateRecord& r) {
  json outcomes = json::array();
  for (const auto& o : r.outcomes) {
    json e{{"name", o.name},
           {"failed", o.failed},
           {"tau_hat", o.tau_hat},
           {"rmse_mu", o.rmse_mu},
           {"quality", o.quality}};
    if (o.failed) e["error"] = o.error;
    outcomes.push_back(std::move(e));
  }
  return {{"n", r.n},         {"t", r.t},
          {"rep", r.rep},     {"seed", r.seed},
          {"true_att", r.true_att}, {"outcomes", outcomes}};
}

inline ReplicateRecord replicate_from_json(const json& j) {
  ReplicateRecord r;
  r.n = j.at("n").get<std::size_t>();
  r.t = j.at("t").get<std::size_t>();
  r.rep = j.at("rep").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.true_att = j.at("true_att").get<double>();
  for (const auto& o : j.at("outcomes")) {
    EstimatorOutcome e;
    e.name = o.at("name").get<std::string>();
    e.failed = o.at("failed").get<bool>();
    e.tau_hat = o.at("tau_hat").is_null()
                    ? std::numeric_limits<double>::quiet_NaN()
                    : o.at("tau_hat").get<double>();
    e.rmse_mu = o.at("rmse_mu").is_null()
                    ? std::numeric_limits<double>::quiet_NaN()
                    : o.at("rmse_mu").get<double>();
    e.quality = o.at("quality").is_null()
                    ? std::numeric_limits<double>::quiet_NaN()
                    : o.at("quality").get<double>();
    if (o.contains("error")) e.error = o.at("error").get<std::string>();
    r.outcomes.push_back(std::move(e));
  }
  return r;
}

inline json to_json(const McReportRow& r) {
  return {{"n", r.n},
          {"t", r.t},
          {"estimator", r.estimator},
          {"bias", r.bias},
          {"rmse_tau", r.rmse_tau},
          {"rmse_mu", r.rmse_mu},
          {"quality_freq", r.quality_freq},
          {"runtime_ms", r.runtime_ms},
          {"failures", r.failures}};
}

inline McReportRow report_row_from_json(const json& j) {
  McReportRow r;
  r.n = j.at("n").get<std::size_t>();
  r.t = j.at("t").get<std::size_t>();
  r.estimator = j.at("estimator").get<std::string>();
  auto num = [&](const char* key) {
    return j.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN()
                               : j.at(key).get<double>();
  };
  r.bias = num("bias");
  r.rmse_tau = num("rmse_tau");
  r.rmse_mu = num("rmse_mu");
  r.quality_freq = num("quality_freq");
  r.runtime_ms = num("runtime_ms");
  r.failures = j.at("failures").get<std::size_t>();
  return r;
}

}  // namespace npanel
