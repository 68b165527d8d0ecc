#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "npanel/matrix.hpp"
#include "npanel/panel.hpp"
#include "npanel/quadrature.hpp"
#include "npanel/rng.hpp"

namespace npanel {

// ---------------------------------------------------------------------------
// Outcome functions
// ---------------------------------------------------------------------------

/// Built-in outcome functions g(alpha, beta, eps). `noise_scale` multiplies
/// the idiosyncratic component where each form places it:
///   twfe:             alpha + beta + s*eps
///   linear_factor:    alpha'beta + s*eps        (rank-r latents)
///   sign_flip:        alpha*(beta - 1/2) + s*eps   (row means carry no signal)
///   scale_noise:      alpha*(beta + s*eps)         (noise scales with alpha)
///   symmetric_square: (alpha-1/2)^2*(beta-1/2) + s*eps
///                       (alpha and 1-alpha are observationally identical)
enum class GKind {
  twfe,
  linear_factor,
  sign_flip,
  scale_noise,
  symmetric_square,
  custom,
};

inline const char* to_string(GKind k) {
  switch (k) {
    case GKind::twfe: return "twfe";
    case GKind::linear_factor: return "linear_factor";
    case GKind::sign_flip: return "sign_flip";
    case GKind::scale_noise: return "scale_noise";
    case GKind::symmetric_square: return "symmetric_square";
    case GKind::custom: return "custom";
  }
  return "?";
}

using GFunction = std::function<double(std::span<const double> alpha,
                                       std::span<const double> beta,
                                       std::span<const double> eps)>;

struct GSpec {
  GKind kind = GKind::twfe;
  std::size_t rank = 1;       // linear_factor only
  double noise_scale = 1.0;   // see GKind docs; defaults adjusted per kind below
  // custom only:
  GFunction fn;
  std::size_t d_alpha = 1;
  std::size_t d_beta = 1;
  std::size_t d_eps = 1;
  /// Required for mu quadrature when the custom epsilon marginal is unbounded.
  std::optional<double> eps_truncation;

  static GSpec builtin(GKind kind, double noise_scale = -1.0, std::size_t rank = 1) {
    GSpec g;
    g.kind = kind;
    g.rank = rank;
    if (noise_scale >= 0.0) {
      g.noise_scale = noise_scale;
    } else {
      // sign_flip and symmetric_square are noiseless in their canonical form.
      g.noise_scale =
          (kind == GKind::sign_flip || kind == GKind::symmetric_square) ? 0.0 : 1.0;
    }
    return g;
  }
};

struct LatentDists {
  MarginalKind alpha = MarginalKind::uniform01;
  MarginalKind beta = MarginalKind::uniform01;
  MarginalKind epsilon = MarginalKind::standard_normal;
};

inline double marginal_mean(MarginalKind k) {
  return k == MarginalKind::uniform01 ? 0.5 : 0.0;
}
inline double marginal_median(MarginalKind k) {
  return k == MarginalKind::uniform01 ? 0.5 : 0.0;
}

// ---------------------------------------------------------------------------
// Assignment mechanisms
// ---------------------------------------------------------------------------

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Propensity families e(alpha, beta). All depend on the latents only, so
/// assignment is independent of the control outcome given (alpha, beta), and
/// all satisfy clamp < e < 1 - clamp.
struct AssignmentSpec {
  enum class Kind { uniform, confounded_logistic, block };
  Kind kind = Kind::uniform;
  double p = 0.2;      // uniform
  double a = 0.0;      // logistic: e = clamp(logistic(a*score_a + b*score_b))
  double b = 0.0;
  double clamp = 0.1;  // block & logistic; in (0, 1/2)

  static AssignmentSpec uniform(double p) {
    AssignmentSpec s;
    s.kind = Kind::uniform;
    s.p = p;
    return s;
  }
  static AssignmentSpec confounded_logistic(double a, double b, double clamp) {
    AssignmentSpec s;
    s.kind = Kind::confounded_logistic;
    s.a = a;
    s.b = b;
    s.clamp = clamp;
    return s;
  }
  static AssignmentSpec block(double clamp) {
    AssignmentSpec s;
    s.kind = Kind::block;
    s.clamp = clamp;
    return s;
  }

  void validate() const {
    switch (kind) {
      case Kind::uniform:
        if (!(p > 0.0 && p < 1.0))
          throw std::invalid_argument("assignment: uniform p must lie in (0,1)");
        break;
      case Kind::confounded_logistic:
      case Kind::block:
        if (!(clamp > 0.0 && clamp < 0.5))
          throw std::invalid_argument("assignment: clamp must lie in (0, 1/2)");
        break;
    }
  }

  /// Overlap margin: the largest c with c < e < 1-c pointwise.
  double overlap_margin() const {
    return kind == Kind::uniform ? std::min(p, 1.0 - p) : clamp;
  }

  double propensity(std::span<const double> alpha, std::span<const double> beta,
                    const LatentDists& dists) const {
    const double sa = alpha.empty() ? 0.0 : alpha[0];
    const double sb = beta.empty() ? 0.0 : beta[0];
    switch (kind) {
      case Kind::uniform:
        return p;
      case Kind::confounded_logistic: {
        const double e = logistic(a * sa + b * sb);
        return std::min(1.0 - clamp, std::max(clamp, e));
      }
      case Kind::block: {
        const bool high = sa > marginal_median(dists.alpha) &&
                          sb > marginal_median(dists.beta);
        return high ? 1.0 - clamp : clamp;
      }
    }
    return p;
  }
};

struct AssignmentFamilyInfo {
  std::string name;
  std::string signature;
  std::string description;
};

/// Catalog of the named propensity families.
inline std::vector<AssignmentFamilyInfo> builtin_assignments() {
  return {
      {"uniform", "uniform(p)", "constant propensity e = p for all latents"},
      {"confounded_logistic", "confounded_logistic(a,b,c)",
       "e = clamp(logistic(a*score(alpha) + b*score(beta)), c, 1-c); score is the "
       "first latent coordinate"},
      {"block", "block(c)",
       "e = 1-c when both latent scores exceed their marginal medians, c elsewhere"},
  };
}

// ---------------------------------------------------------------------------
// Treatment effects
// ---------------------------------------------------------------------------

struct EffectSpec {
  enum class Kind { none, constant, cell_function };
  Kind kind = Kind::none;
  double tau = 0.0;
  /// cell_function: effect as a function of the cell's latents.
  std::function<double(std::span<const double> alpha, std::span<const double> beta)> fn;

  static EffectSpec none() { return {}; }
  static EffectSpec constant(double tau) {
    EffectSpec e;
    e.kind = Kind::constant;
    e.tau = tau;
    return e;
  }

  double value(std::span<const double> alpha, std::span<const double> beta) const {
    switch (kind) {
      case Kind::none: return 0.0;
      case Kind::constant: return tau;
      case Kind::cell_function: return fn(alpha, beta);
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// DgpSpec
// ---------------------------------------------------------------------------

struct DgpSpec {
  GSpec g;
  LatentDists latents;
  double rho_beta = 0.0;  // AR(1) coefficient for the time component, in [0,1)
  double rho_eps = 0.0;   // AR(1) coefficient for the idiosyncratic component
  AssignmentSpec assignment;
  EffectSpec effect;
  std::size_t mu_quadrature_nodes = 129;  // custom-g conditional means

  std::size_t d_alpha() const {
    switch (g.kind) {
      case GKind::linear_factor: return g.rank;
      case GKind::custom: return g.d_alpha;
      default: return 1;
    }
  }
  std::size_t d_beta() const {
    switch (g.kind) {
      case GKind::linear_factor: return g.rank;
      case GKind::custom: return g.d_beta;
      default: return 1;
    }
  }
  std::size_t d_eps() const { return g.kind == GKind::custom ? g.d_eps : 1; }

  void validate() const {
    if (g.kind == GKind::linear_factor && g.rank == 0)
      throw std::invalid_argument("dgp: linear_factor rank must be positive");
    if (g.kind == GKind::custom) {
      if (!g.fn) throw std::invalid_argument("dgp: custom g requires a function");
      if (g.d_alpha == 0 || g.d_beta == 0 || g.d_eps == 0)
        throw std::invalid_argument("dgp: custom g requires positive dimensions");
    }
    if (!(g.noise_scale >= 0.0) || !std::isfinite(g.noise_scale))
      throw std::invalid_argument("dgp: noise_scale must be finite and nonnegative");
    if (!(rho_beta >= 0.0 && rho_beta < 1.0) || !(rho_eps >= 0.0 && rho_eps < 1.0))
      throw std::invalid_argument("dgp: AR(1) coefficients must lie in [0,1)");
    if (effect.kind == EffectSpec::Kind::cell_function && !effect.fn)
      throw std::invalid_argument("dgp: cell-function effect requires a function");
    assignment.validate();
  }
};

// ---------------------------------------------------------------------------
// Evaluation of g and mu
// ---------------------------------------------------------------------------

inline double eval_g(const GSpec& g, std::span<const double> alpha,
                     std::span<const double> beta, std::span<const double> eps) {
  switch (g.kind) {
    case GKind::twfe:
      return alpha[0] + beta[0] + g.noise_scale * eps[0];
    case GKind::linear_factor: {
      double dot = 0.0;
      for (std::size_t r = 0; r < g.rank; ++r) dot += alpha[r] * beta[r];
      return dot + g.noise_scale * eps[0];
    }
    case GKind::sign_flip:
      return alpha[0] * (beta[0] - 0.5) + g.noise_scale * eps[0];
    case GKind::scale_noise:
      return alpha[0] * (beta[0] + g.noise_scale * eps[0]);
    case GKind::symmetric_square: {
      const double a = alpha[0] - 0.5;
      return a * a * (beta[0] - 0.5) + g.noise_scale * eps[0];
    }
    case GKind::custom:
      return g.fn(alpha, beta, eps);
  }
  return 0.0;
}

namespace detail {

/// Tensor-product quadrature over the epsilon distribution for custom g.
inline double mu_by_quadrature(const DgpSpec& spec, std::span<const double> alpha,
                               std::span<const double> beta) {
  const std::size_t d = spec.d_eps();
  QuadratureRule rule;
  if (spec.latents.epsilon == MarginalKind::uniform01) {
    rule = gauss_legendre(spec.mu_quadrature_nodes, 0.0, 1.0);
  } else {
    if (!spec.g.eps_truncation)
      throw std::invalid_argument(
          "mu_oracle: custom g with unbounded epsilon requires eps_truncation");
    const double bound = *spec.g.eps_truncation;
    rule = gauss_legendre(spec.mu_quadrature_nodes, -bound, bound);
    const double inv_sqrt_2pi = 0.3989422804014326779;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k)
      rule.weights[k] *= inv_sqrt_2pi * std::exp(-0.5 * rule.nodes[k] * rule.nodes[k]);
  }
  // Odometer over the d-dimensional tensor grid.
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> eps(d);
  KahanSum acc;
  for (;;) {
    double w = 1.0;
    for (std::size_t c = 0; c < d; ++c) {
      eps[c] = rule.nodes[idx[c]];
      w *= rule.weights[idx[c]];
    }
    acc.add(w * spec.g.fn(alpha, beta, eps));
    std::size_t c = 0;
    while (c < d && ++idx[c] == rule.nodes.size()) idx[c++] = 0;
    if (c == d) break;
  }
  return acc.value();
}

}  // namespace detail

inline double g_noise_mean(const DgpSpec& spec) {
  return spec.g.noise_scale * marginal_mean(spec.latents.epsilon);
}

/// Conditional mean mu(alpha, beta) = E[g(alpha, beta, eps) | alpha, beta].
/// Closed forms for the built-ins (noise terms contribute noise_scale times
/// the epsilon marginal mean); quadrature for custom g.
inline double mu_oracle(const DgpSpec& spec, std::span<const double> alpha,
                        std::span<const double> beta) {
  const double m = g_noise_mean(spec);
  switch (spec.g.kind) {
    case GKind::twfe:
      return alpha[0] + beta[0] + m;
    case GKind::linear_factor: {
      double dot = 0.0;
      for (std::size_t r = 0; r < spec.g.rank; ++r) dot += alpha[r] * beta[r];
      return dot + m;
    }
    case GKind::sign_flip:
      return alpha[0] * (beta[0] - 0.5) + m;
    case GKind::scale_noise:
      return alpha[0] * (beta[0] + m);
    case GKind::symmetric_square: {
      const double a = alpha[0] - 0.5;
      return a * a * (beta[0] - 0.5) + m;
    }
    case GKind::custom:
      return detail::mu_by_quadrature(spec, alpha, beta);
  }
  return 0.0;
}

inline double mu_oracle(const DgpSpec& spec, double alpha, double beta) {
  return mu_oracle(spec, std::span<const double>(&alpha, 1),
                   std::span<const double>(&beta, 1));
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct LatentDraw {
  Matrix alpha;                 // N x d_alpha
  Matrix beta;                  // T x d_beta
  std::vector<Matrix> epsilon;  // d_eps matrices of N x T
};

struct SimulatedPanel {
  Panel panel;
  TreatmentMask mask;
  LatentDraw truth;
  Matrix mu;        // N x T of mu(alpha_i, beta_t)
  double true_att;  // mean effect over treated cells; NaN when none treated
};

namespace detail {

/// Stationary AR(1) series with the requested marginal, via a Gaussian
/// copula: z_1 ~ N(0,1), z_t = rho z_{t-1} + sqrt(1-rho^2) w_t, then the
/// quantile transform. Initialization from the stationary law keeps the
/// marginal constant across t.
inline void fill_ar1(Rng& rng, double rho, MarginalKind marginal,
                     std::span<double> out) {
  const double innov = std::sqrt(1.0 - rho * rho);
  double z = 0.0;
  for (std::size_t t = 0; t < out.size(); ++t) {
    const double w = rng.normal();
    z = t == 0 ? w : rho * z + innov * w;
    out[t] = marginal == MarginalKind::uniform01 ? normal_cdf(z) : z;
  }
}

}  // namespace detail

/// Draws a full panel from the generative model. Deterministic given
/// (spec, n, t, seed): the latent, noise, and assignment draws come from
/// fixed independent substreams, so e.g. rescaling g changes outcomes but
/// not latents or assignment.
inline SimulatedPanel simulate(const DgpSpec& spec, std::size_t n, std::size_t t,
                               std::uint64_t seed) {
  spec.validate();
  if (n < 2 || t < 2) throw std::invalid_argument("simulate: need n >= 2 and t >= 2");

  const std::size_t da = spec.d_alpha();
  const std::size_t db = spec.d_beta();
  const std::size_t de = spec.d_eps();

  LatentDraw draw;
  draw.alpha = Matrix(n, da);
  {
    Rng rng = substream(seed, "dgp/alpha");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < da; ++c)
        draw.alpha(i, c) = spec.latents.alpha == MarginalKind::uniform01
                               ? rng.uniform01()
                               : rng.normal();
  }
  draw.beta = Matrix(t, db);
  {
    Rng rng = substream(seed, "dgp/beta");
    std::vector<double> series(t);
    for (std::size_t c = 0; c < db; ++c) {
      detail::fill_ar1(rng, spec.rho_beta, spec.latents.beta, series);
      for (std::size_t s = 0; s < t; ++s) draw.beta(s, c) = series[s];
    }
  }
  draw.epsilon.assign(de, Matrix(n, t));
  {
    Rng rng = substream(seed, "dgp/epsilon");
    std::vector<double> series(t);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < de; ++c) {
        detail::fill_ar1(rng, spec.rho_eps, spec.latents.epsilon, series);
        for (std::size_t s = 0; s < t; ++s) draw.epsilon[c](i, s) = series[s];
      }
  }

  Matrix y0(n, t);
  Matrix mu(n, t);
  std::vector<double> eps_cell(de);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ai = draw.alpha.row(i);
    for (std::size_t s = 0; s < t; ++s) {
      const auto bs = draw.beta.row(s);
      for (std::size_t c = 0; c < de; ++c) eps_cell[c] = draw.epsilon[c](i, s);
      y0(i, s) = eval_g(spec.g, ai, bs, eps_cell);
      mu(i, s) = mu_oracle(spec, ai, bs);
    }
  }

  TreatmentMask mask(n, t);
  {
    Rng rng = substream(seed, "dgp/assign");
    for (std::size_t i = 0; i < n; ++i) {
      const auto ai = draw.alpha.row(i);
      for (std::size_t s = 0; s < t; ++s)
        mask.set(i, s, rng.bernoulli(spec.assignment.propensity(ai, draw.beta.row(s),
                                                                spec.latents)));
    }
  }

  Matrix y = y0;
  KahanSum effect_sum;
  std::size_t n_treated = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s)
      if (mask.treated(i, s)) {
        const double eff = spec.effect.value(draw.alpha.row(i), draw.beta.row(s));
        y(i, s) += eff;
        effect_sum.add(eff);
        ++n_treated;
      }

  const double att = n_treated == 0
                         ? std::numeric_limits<double>::quiet_NaN()
                         : effect_sum.value() / static_cast<double>(n_treated);
  return SimulatedPanel{Panel(std::move(y)), std::move(mask), std::move(draw),
                        std::move(mu), att};
}

}  // namespace npanel
