#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "npanel/matrix.hpp"

namespace npanel {

struct CellIndex {
  std::size_t unit = 0;
  std::size_t time = 0;
  bool operator==(const CellIndex&) const = default;
};

/// Balanced N x T outcome panel. Immutable after construction; safe to share
/// across concurrent readers.
class Panel {
 public:
  Panel(Matrix outcomes, std::vector<std::string> unit_ids,
        std::vector<std::string> time_ids)
      : outcomes_(std::move(outcomes)),
        unit_ids_(std::move(unit_ids)),
        time_ids_(std::move(time_ids)) {
    check_invariants();
  }

  /// Convenience constructor with default identifiers u0..uN-1 / t0..tT-1.
  explicit Panel(Matrix outcomes)
      : outcomes_(std::move(outcomes)),
        unit_ids_(default_ids("u", outcomes_.rows())),
        time_ids_(default_ids("t", outcomes_.cols())) {
    check_invariants();
  }

  std::size_t n_units() const { return outcomes_.rows(); }
  std::size_t n_periods() const { return outcomes_.cols(); }
  double operator()(std::size_t i, std::size_t t) const { return outcomes_(i, t); }
  std::span<const double> unit_row(std::size_t i) const { return outcomes_.row(i); }
  const Matrix& outcomes() const { return outcomes_; }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& time_ids() const { return time_ids_; }

  bool in_bounds(CellIndex c) const {
    return c.unit < n_units() && c.time < n_periods();
  }

 private:
  void check_invariants() const {
    if (outcomes_.rows() < 2 || outcomes_.cols() < 2)
      throw std::invalid_argument("Panel: need N >= 2 and T >= 2");
    if (unit_ids_.size() != outcomes_.rows() || time_ids_.size() != outcomes_.cols())
      throw std::invalid_argument("Panel: identifier lists must match dimensions");
    require_unique(unit_ids_, "unit_ids");
    require_unique(time_ids_, "time_ids");
  }
  static std::vector<std::string> default_ids(const char* prefix, std::size_t n) {
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
  }
  static void require_unique(const std::vector<std::string>& ids, const char* what) {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second)
        throw std::invalid_argument(std::string("Panel: duplicate ") + what + ": " + id);
  }

  Matrix outcomes_;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> time_ids_;
};

/// Binary assignment matrix W. W_it = 1 marks a treated (or group-1) cell;
/// the corresponding outcome is then the treated potential outcome and every
/// control-outcome computation must exclude it.
class TreatmentMask {
 public:
  TreatmentMask(std::size_t n_units, std::size_t n_periods, std::uint8_t fill = 0)
      : n_(n_units), t_(n_periods), w_(n_units * n_periods, fill) {
    if (fill > 1) throw std::invalid_argument("TreatmentMask: entries must be 0/1");
  }

  static TreatmentMask from_rows(const std::vector<std::vector<int>>& rows) {
    if (rows.empty() || rows.front().empty())
      throw std::invalid_argument("TreatmentMask: empty");
    TreatmentMask m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.t_)
        throw std::invalid_argument("TreatmentMask: ragged input");
      for (std::size_t t = 0; t < m.t_; ++t) m.set(i, t, rows[i][t] != 0);
    }
    return m;
  }

  std::size_t n_units() const { return n_; }
  std::size_t n_periods() const { return t_; }
  bool treated(std::size_t i, std::size_t t) const { return w_[i * t_ + t] != 0; }
  void set(std::size_t i, std::size_t t, bool v) { w_[i * t_ + t] = v ? 1 : 0; }

  std::size_t n_treated() const {
    std::size_t c = 0;
    for (auto v : w_) c += v;
    return c;
  }

  bool matches(const Panel& p) const {
    return n_ == p.n_units() && t_ == p.n_periods();
  }

  bool operator==(const TreatmentMask&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t t_ = 0;
  std::vector<std::uint8_t> w_;
};

/// Known or assumed bounds on the outcome process: |mu| <= mu_bar,
/// |d mu| <= mu_prime_bar, |g| <= c_y.
struct TheoryConstants {
  double mu_bar = 1.0;
  double mu_prime_bar = 1.0;
  double c_y = 1.0;

  void validate() const {
    if (!(mu_bar > 0.0) || !std::isfinite(mu_bar) || !(mu_prime_bar > 0.0) ||
        !std::isfinite(mu_prime_bar) || !(c_y > 0.0) || !std::isfinite(c_y))
      throw std::invalid_argument("TheoryConstants: bounds must be finite and positive");
  }
};

struct ValidationIssue {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string message;
  std::optional<CellIndex> cell;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  double empirical_bound = 0.0;

  bool valid() const {
    for (const auto& i : issues)
      if (i.severity == ValidationIssue::Severity::error) return false;
    return true;
  }
  std::size_t warning_count() const {
    std::size_t c = 0;
    for (const auto& i : issues)
      if (i.severity == ValidationIssue::Severity::warning) ++c;
    return c;
  }
};

/// Max over cells of |Y_it|; the empirical stand-in for the outcome bound.
inline double empirical_bound(const Panel& panel) {
  double b = 0.0;
  for (std::size_t i = 0; i < panel.n_units(); ++i)
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      const double a = std::fabs(panel(i, t));
      if (a > b) b = a;
    }
  return b;
}

/// Pure report-style validation; callers decide severity. Flags non-finite
/// entries, mask shape mismatches, and fully treated rows/columns (the latter
/// empty out every control-period set they touch).
inline ValidationReport validate_panel(const Panel& panel,
                                       const TreatmentMask* mask = nullptr) {
  ValidationReport report;
  double bound = 0.0;
  for (std::size_t i = 0; i < panel.n_units(); ++i)
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      const double y = panel(i, t);
      if (!std::isfinite(y)) {
        report.issues.push_back({ValidationIssue::Severity::error,
                                 "non-finite outcome", CellIndex{i, t}});
      } else if (std::fabs(y) > bound) {
        bound = std::fabs(y);
      }
    }
  report.empirical_bound = bound;

  if (mask != nullptr) {
    if (!mask->matches(panel)) {
      report.issues.push_back(
          {ValidationIssue::Severity::error, "mask dimensions do not match panel", {}});
      return report;
    }
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
      bool all = true;
      for (std::size_t t = 0; t < panel.n_periods() && all; ++t)
        all = mask->treated(i, t);
      if (all)
        report.issues.push_back({ValidationIssue::Severity::warning,
                                 "unit with no control periods: " + panel.unit_ids()[i],
                                 });
    }
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      bool all = true;
      for (std::size_t i = 0; i < panel.n_units() && all; ++i)
        all = mask->treated(i, t);
      if (all)
        report.issues.push_back({ValidationIssue::Severity::warning,
                                 "period with no control units: " + panel.time_ids()[t],
                                 });
    }
  }
  return report;
}

/// The working outcome bound: the supplied theory constant when present,
/// else the empirical bound inflated by `inflation`.
inline double working_outcome_bound(const Panel& panel,
                                    const std::optional<TheoryConstants>& constants,
                                    double inflation = 1.0) {
  if (constants) {
    constants->validate();
    return constants->c_y;
  }
  return empirical_bound(panel) * inflation;
}

}  // namespace npanel
