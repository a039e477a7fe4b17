#pragma once

#include <limits>
#include <optional>

#include "retmle/basis.hpp"

namespace retmle {

struct PoissonFitOptions {
  int n_penalties = 50;
  double penalty_min_ratio = 1e-4;
  int cv_folds = 5;
  std::uint64_t fold_seed = 1;
  double coef_tol = 1e-7;
  int max_sweeps = 10000;
  double kkt_tol = 1e-7;
  /// When set, skip cross-validation and fit at this penalty (0 allowed).
  std::optional<double> fixed_penalty;
  /// Test hook: penalized objective recorded after every sweep of the final fit.
  std::vector<double>* objective_trace = nullptr;
};

/// Fitted log-linear intensity over a basis-column design.
struct HalFit {
  std::vector<BasisColumn> columns;
  double intercept = 0.0;
  std::vector<int> coef_index;     // sparse, ascending
  std::vector<double> coef_value;
  double penalty = 0.0;
  double l1_norm = 0.0;
  double cv_loss = std::numeric_limits<double>::quiet_NaN();
  double null_cv_loss = std::numeric_limits<double>::quiet_NaN();
  int sweeps = 0;
  bool converged = true;
  double kkt_residual = 0.0;  // worst subgradient violation at the solution

  static constexpr double rate_floor = 1e-12;

  double log_rate(double t, double history_v, std::span<const double> x) const;
  double rate(double t, double history_v, std::span<const double> x) const;
};

/// argmin over beta of sum_rows [exposure*exp(eta) - events*eta]
/// + penalty*||beta||_1, intercept unpenalized, eta = intercept + X beta.
/// The penalty is cross-validated over a descending log-spaced path unless
/// options.fixed_penalty is set. Rows are aggregated by (pattern, fold);
/// folds group whole subjects.
HalFit fit_penalized_poisson(const PoissonDesign& design, std::vector<BasisColumn> columns,
                             const PoissonFitOptions& options = {});

/// sum_rows exposure*exp(eta) - events*eta for a fit on a design.
double poisson_loss(const PoissonDesign& design, const HalFit& fit);

/// Per-column score at the fit: g_j = sum_rows x_j * (exposure*exp(eta) - events).
std::vector<double> poisson_score(const PoissonDesign& design, const HalFit& fit);

}  // namespace retmle
