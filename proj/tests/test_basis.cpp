#include <doctest.h>

#include "retmle/basis.hpp"

using namespace retmle;

namespace {

SubjectPath path_with(std::vector<EventRecord> records, double admin_end,
                      std::vector<double> covs = {0.0}, int treatment = 0) {
  static int next = 0;
  SubjectPath p;
  p.id = "b" + std::to_string(next++);
  p.covariates = std::move(covs);
  p.treatment = treatment;
  p.records = std::move(records);
  p.admin_end = admin_end;
  return p;
}

PooledGrid grid_of(std::vector<double> times, double horizon) {
  PooledGrid g;
  g.times = std::move(times);
  g.horizon = horizon;
  return g;
}

std::vector<std::pair<int, double>> row_pattern(const PoissonDesign& d, size_t row) {
  std::vector<std::pair<int, double>> out;
  int p = d.rows[row].pattern;
  for (int e = d.pattern_offsets[static_cast<size_t>(p)];
       e < d.pattern_offsets[static_cast<size_t>(p) + 1]; ++e) {
    out.emplace_back(d.pattern_cols[static_cast<size_t>(e)],
                     d.pattern_values[static_cast<size_t>(e)]);
  }
  return out;
}

}  // namespace

TEST_CASE("expand_design follows the interval convention") {
  auto grid = grid_of({0.5, 1.0}, 1.0);

  SUBCASE("intercept-only rows for a subject dying at 1.0") {
    std::vector<SubjectPath> paths = {path_with({{1.0, EventKind::Death}}, 1.0)};
    BasisColumn intercept_like;  // no factors: identically one
    std::vector<BasisColumn> cols = {intercept_like};
    auto design = expand_design(paths, grid, EventKind::Death, cols, 1);
    REQUIRE(design.rows.size() == 2);
    CHECK(design.rows[0].exposure == doctest::Approx(0.5));
    CHECK(design.rows[0].events == 0.0);
    CHECK(design.rows[1].exposure == doctest::Approx(0.5));
    CHECK(design.rows[1].events == 1.0);
  }
  SUBCASE("subject censored before the first grid time contributes no rows") {
    std::vector<SubjectPath> paths = {path_with({{0.4, EventKind::Censor}}, 1.0)};
    std::vector<BasisColumn> cols = {BasisColumn{}};
    auto design = expand_design(paths, grid, EventKind::Recurrent, cols, 1);
    CHECK(design.rows.empty());
  }
  SUBCASE("time knot at 0.5 is active on both rows (threshold inclusive)") {
    std::vector<SubjectPath> paths = {path_with({{1.0, EventKind::Death}}, 1.0)};
    BasisColumn knot;
    knot.factors.push_back({IndicatorFactor::Domain::Time, 0, 0.5});
    std::vector<BasisColumn> cols = {knot};
    auto design = expand_design(paths, grid, EventKind::Death, cols, 1);
    REQUIRE(design.rows.size() == 2);
    CHECK(row_pattern(design, 0) == std::vector<std::pair<int, double>>{{0, 1.0}});
    CHECK(row_pattern(design, 1) == std::vector<std::pair<int, double>>{{0, 1.0}});
  }
  SUBCASE("history indicator switches after the first event") {
    auto grid3 = grid_of({0.3, 0.6, 0.9}, 1.0);
    std::vector<SubjectPath> paths = {path_with({{0.3, EventKind::Recurrent}}, 1.0)};
    BasisColumn hist;
    hist.factors.push_back({IndicatorFactor::Domain::History, 0, 1.0});
    std::vector<BasisColumn> cols = {hist};
    auto design = expand_design(paths, grid3, EventKind::Recurrent, cols, 2);
    REQUIRE(design.rows.size() == 3);
    CHECK(row_pattern(design, 0).empty());          // N^y(0.3-) = 0
    CHECK(!row_pattern(design, 1).empty());         // N^y(0.6-) = 1
    CHECK(!row_pattern(design, 2).empty());
    CHECK(design.rows[0].events == 1.0);
  }
  SUBCASE("raw columns carry covariate powers") {
    std::vector<SubjectPath> paths = {path_with({{1.0, EventKind::Death}}, 1.0, {-0.5}, 1)};
    BasisColumn l1sq;
    l1sq.raw_coord = 0;
    l1sq.raw_power = 2;
    BasisColumn treat;
    treat.raw_coord = 1;  // treatment sits after the covariates
    std::vector<BasisColumn> cols = {l1sq, treat};
    auto design = expand_design(paths, grid, EventKind::Death, cols, 1);
    auto pattern = row_pattern(design, 0);
    REQUIRE(pattern.size() == 2);
    CHECK(pattern[0].second == doctest::Approx(0.25));
    CHECK(pattern[1].second == doctest::Approx(1.0));
  }
}

TEST_CASE("basis enumeration respects the interaction order") {
  BasisSpec spec;
  spec.time_knots = {0.2, 0.4};
  spec.covariate_knots = {{0.0}, {1.0}};
  spec.history_knots = {1.0};
  spec.max_interaction_order = 2;
  auto cols = spec.enumerate();
  // sections: time(2), cov0(1), cov1(1), hist(1)
  // singles: 2+1+1+1 = 5; pairs: time x cov0 2 + time x cov1 2 + time x hist 2
  //          + cov0 x cov1 1 + cov0 x hist 1 + cov1 x hist 1 = 9
  CHECK(cols.size() == 14);
  for (const auto& c : cols) {
    CHECK(c.factors.size() <= 2);
    int time_factors = 0;
    for (const auto& f : c.factors) {
      if (f.domain == IndicatorFactor::Domain::Time) ++time_factors;
    }
    CHECK(time_factors <= 1);
  }

  spec.max_interaction_order = 1;
  CHECK(spec.enumerate().size() == 5);
}

TEST_CASE("default basis drops always-on thresholds") {
  std::vector<SubjectPath> paths;
  for (int i = 0; i < 6; ++i) {
    paths.push_back(path_with({{0.2 + 0.1 * i, EventKind::Death}}, 1.0,
                              {0.1 * i}, i % 2));
  }
  auto grid = build_grid(paths, 1.0);
  auto spec = make_default_basis(paths, grid, 2, 100, 10, 2);
  // first grid time is not a knot: 1{t >= T_(1)} holds on every design row
  CHECK(spec.time_knots.front() == grid.times[1]);
  // binary treatment column gets the single knot at 1
  CHECK(spec.covariate_knots.back() == std::vector<double>{1.0});
  // covariate knots exclude the observed minimum
  CHECK(spec.covariate_knots[0].front() > 0.0);
  CHECK(spec.history_knots == std::vector<double>{1.0});
}
