#pragma once

#include <cstdint>
#include <span>

#include "retmle/event_data.hpp"

namespace retmle {

/// One zero-order spline factor: 1{value >= threshold}, where value is study
/// time, a coordinate of X = (L, A), or the history summary v = min(N^y(t-), J-1).
struct IndicatorFactor {
  enum class Domain : std::uint8_t { Time, Covariate, History };
  Domain domain = Domain::Covariate;
  int coord = 0;  // X coordinate; ignored for Time and (scalar) History
  double threshold = 0.0;
};

/// Product of indicator factors, optionally times a raw covariate power.
/// Raw terms are used by parametric model forms; HAL expansions emit
/// indicator-only columns. At most one Time factor per column.
struct BasisColumn {
  std::vector<IndicatorFactor> factors;
  int raw_coord = -1;
  int raw_power = 1;

  bool has_time_factor() const;
  double time_threshold() const;  // meaningful only when has_time_factor()

  /// Value with the time gate left out (applied by the caller).
  double value_static(double history_v, std::span<const double> x) const;
  double value(double t, double history_v, std::span<const double> x) const;
};

/// Tensor basis over time knots, per-coordinate covariate knots and history
/// knots. Generated columns are all products of at most
/// max_interaction_order factors drawn from distinct sections.
struct BasisSpec {
  std::vector<double> time_knots;
  std::vector<std::vector<double>> covariate_knots;  // one vector per X coordinate
  std::vector<double> history_knots;
  int max_interaction_order = 2;

  std::vector<BasisColumn> enumerate() const;
};

/// Knot placement from the data: time knots at (quantile-thinned) pooled grid
/// times, covariate knots at subject-level value quantiles, history knots at
/// 1, ..., count_cap-1. Always-active thresholds are dropped.
BasisSpec make_default_basis(std::span<const SubjectPath> paths, const PooledGrid& grid,
                             int count_cap, int time_knot_cap = 100,
                             int covariate_knot_count = 10, int max_interaction_order = 2);

/// Quantile-thinned grid times past the first, for piecewise-constant
/// baselines in parametric model forms.
std::vector<double> thin_time_knots(const PooledGrid& grid, int cap);

/// Design for the L1-penalized Poisson likelihood: one row per (subject, grid
/// interval inside the at-risk period), with covariates evaluated at the
/// interval's right endpoint time and left-endpoint history state, exposure
/// equal to the interval length and events indicating an event of the target
/// kind at the right endpoint. Rows share column patterns via a pattern table.
struct PoissonDesign {
  struct Row {
    int subject = 0;
    int pattern = 0;
    double exposure = 0.0;
    double events = 0.0;
  };
  std::vector<Row> rows;

  std::vector<int> pattern_offsets;  // size n_patterns()+1
  std::vector<int> pattern_cols;
  std::vector<double> pattern_values;
  int n_columns = 0;
  int n_subjects = 0;

  int n_patterns() const { return static_cast<int>(pattern_offsets.empty() ? 0 : pattern_offsets.size() - 1); }
  double total_exposure() const;
  double total_events() const;
};

PoissonDesign expand_design(std::span<const SubjectPath> paths, const PooledGrid& grid,
                            EventKind kind, std::span<const BasisColumn> columns,
                            int count_cap);

}  // namespace retmle
