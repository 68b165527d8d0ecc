#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "npanel/matrix.hpp"
#include "npanel/panel.hpp"

using namespace npanel;

TEST_CASE("matrix basics") {
  Matrix m(2, 3, 1.5);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 3);
  m(1, 2) = -4.0;
  REQUIRE(m(1, 2) == -4.0);
  REQUIRE(m.row(1)[2] == -4.0);
  REQUIRE_THROWS_AS(Matrix::from_rows({{1.0, 2.0}, {3.0}}), std::invalid_argument);
}

TEST_CASE("kahan summation recovers small terms") {
  // 1 + 1e-16 repeated: plain summation loses the tail entirely.
  KahanSum acc;
  acc.add(1.0);
  for (int i = 0; i < 10000; ++i) acc.add(1e-16);
  REQUIRE(acc.value() == Catch::Approx(1.0 + 1e-12).epsilon(1e-12));
}

TEST_CASE("panel invariants") {
  REQUIRE_THROWS_AS(Panel(Matrix(1, 5)), std::invalid_argument);
  REQUIRE_THROWS_AS(Panel(Matrix(5, 1)), std::invalid_argument);
  REQUIRE_THROWS_AS(Panel(Matrix(2, 2), {"a", "a"}, {"x", "y"}), std::invalid_argument);
  REQUIRE_THROWS_AS(Panel(Matrix(2, 2), {"a"}, {"x", "y"}), std::invalid_argument);
  const Panel p(Matrix(3, 4, 2.0));
  REQUIRE(p.n_units() == 3);
  REQUIRE(p.n_periods() == 4);
  REQUIRE(p.unit_ids()[2] == "u2");
}

TEST_CASE("validate_panel: degenerate all-zero panel is valid with bound 0") {
  const Panel p(Matrix(2, 2, 0.0));
  const auto report = validate_panel(p);
  REQUIRE(report.valid());
  REQUIRE(report.empirical_bound == 0.0);
}

TEST_CASE("validate_panel flags a NaN cell") {
  Matrix m(2, 2, 1.0);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  const Panel p(std::move(m));
  const auto report = validate_panel(p);
  REQUIRE_FALSE(report.valid());
  REQUIRE(report.issues.size() == 1);
  REQUIRE(report.issues[0].cell.has_value());
  REQUIRE(report.issues[0].cell->unit == 1);
  REQUIRE(report.issues[0].cell->time == 0);
}

TEST_CASE("validate_panel warns about a period with no control units") {
  const Panel p(Matrix(3, 4, 1.0));
  TreatmentMask mask(3, 4);
  for (std::size_t i = 0; i < 3; ++i) mask.set(i, 2, true);
  const auto report = validate_panel(p, &mask);
  REQUIRE(report.valid());
  REQUIRE(report.warning_count() == 1);
  REQUIRE(report.issues[0].message.find("period with no control units") !=
          std::string::npos);
}

TEST_CASE("empirical bound") {
  Matrix m(2, 2, 1.0);
  REQUIRE(empirical_bound(Panel(m)) == 1.0);
  m(0, 1) = -3.0;
  m(1, 0) = 2.0;
  REQUIRE(empirical_bound(Panel(m)) == 3.0);
}

TEST_CASE("working outcome bound prefers supplied constants") {
  const Panel p(Matrix(2, 2, 2.0));
  REQUIRE(working_outcome_bound(p, std::nullopt) == 2.0);
  REQUIRE(working_outcome_bound(p, std::nullopt, 1.5) == 3.0);
  TheoryConstants c{1.0, 1.0, 7.0};
  REQUIRE(working_outcome_bound(p, c) == 7.0);
  TheoryConstants bad{0.0, 1.0, 1.0};
  REQUIRE_THROWS_AS(working_outcome_bound(p, bad), std::invalid_argument);
}
