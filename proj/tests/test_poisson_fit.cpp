#include <doctest.h>

#include <cmath>
#include <random>

#include "retmle/poisson_fit.hpp"

using namespace retmle;

namespace {

// Hand-built design: rows of (columns..., exposure, events) with one pattern
// per distinct column vector.
PoissonDesign build_design(const std::vector<std::vector<double>>& x,
                           const std::vector<double>& exposure,
                           const std::vector<double>& events,
                           const std::vector<int>& subject) {
  PoissonDesign d;
  d.n_columns = x.empty() ? 0 : static_cast<int>(x[0].size());
  d.pattern_offsets.push_back(0);
  int n_subj = 0;
  for (size_t r = 0; r < x.size(); ++r) {
    for (size_t c = 0; c < x[r].size(); ++c) {
      if (x[r][c] != 0.0) {
        d.pattern_cols.push_back(static_cast<int>(c));
        d.pattern_values.push_back(x[r][c]);
      }
    }
    d.pattern_offsets.push_back(static_cast<int>(d.pattern_cols.size()));
    d.rows.push_back({subject[r], static_cast<int>(r), exposure[r], events[r]});
    n_subj = std::max(n_subj, subject[r] + 1);
  }
  d.n_subjects = n_subj;
  return d;
}

PoissonDesign random_design(std::mt19937_64& rng, int n_rows, int n_cols,
                            double signal = 0.3) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<double>> x(static_cast<size_t>(n_rows),
                                     std::vector<double>(static_cast<size_t>(n_cols)));
  std::vector<double> exposure(static_cast<size_t>(n_rows));
  std::vector<double> events(static_cast<size_t>(n_rows));
  std::vector<int> subject(static_cast<size_t>(n_rows));
  for (int r = 0; r < n_rows; ++r) {
    double eta = -0.5;
    for (int c = 0; c < n_cols; ++c) {
      double ind = unif(rng) < 0.5 ? 1.0 : 0.0;
      x[static_cast<size_t>(r)][static_cast<size_t>(c)] = ind;
      eta += signal * ind * (c % 2 == 0 ? 1.0 : -1.0);
    }
    exposure[static_cast<size_t>(r)] = 0.2 + unif(rng);
    std::poisson_distribution<int> pois(exposure[static_cast<size_t>(r)] * std::exp(eta));
    events[static_cast<size_t>(r)] = pois(rng);
    subject[static_cast<size_t>(r)] = r / 3;
  }
  return build_design(x, exposure, events, subject);
}

std::vector<BasisColumn> plain_columns(int n) {
  std::vector<BasisColumn> cols(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c) {
    cols[static_cast<size_t>(c)].factors.push_back(
        {IndicatorFactor::Domain::Covariate, c, 1.0});
  }
  return cols;
}

}  // namespace

TEST_CASE("full shrinkage recovers the intercept-only rate") {
  std::mt19937_64 rng(2);
  auto design = random_design(rng, 30, 4);
  PoissonFitOptions opt;
  opt.fixed_penalty = 1e9;
  auto fit = fit_penalized_poisson(design, plain_columns(4), opt);
  CHECK(fit.coef_index.empty());
  CHECK(std::exp(fit.intercept) ==
        doctest::Approx(design.total_events() / design.total_exposure()).epsilon(1e-9));
}

TEST_CASE("two-row separable design splits the rates") {
  // rows: (x=0, dt=1, 0 events), (x=1, dt=1, 1 event); single indicator 1{x>=1}.
  // The x=0 cell has no events, so its rate runs to the floor; tight
  // tolerances let the solver follow the separation all the way down.
  auto design = build_design({{0.0}, {1.0}}, {1.0, 1.0}, {0.0, 1.0}, {0, 1});
  PoissonFitOptions opt;
  opt.fixed_penalty = 0.0;
  opt.coef_tol = 1e-12;
  opt.kkt_tol = 1e-12;
  auto fit = fit_penalized_poisson(design, plain_columns(1), opt);
  double rate0 = fit.rate(0.0, 0.0, std::vector<double>{0.0});
  double rate1 = fit.rate(0.0, 0.0, std::vector<double>{1.0});
  CHECK(rate0 <= 1e-10);
  CHECK(rate1 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("all-zero events returns the floored intercept fit") {
  auto design = build_design({{1.0}, {0.0}}, {1.0, 2.0}, {0.0, 0.0}, {0, 1});
  auto fit = fit_penalized_poisson(design, plain_columns(1), {});
  CHECK(fit.coef_index.empty());
  CHECK(fit.rate(0.0, 0.0, std::vector<double>{1.0}) == doctest::Approx(HalFit::rate_floor));
}

TEST_CASE("empty design is rejected") {
  PoissonDesign design;
  design.n_columns = 1;
  CHECK_THROWS_AS(fit_penalized_poisson(design, plain_columns(1), {}), DataError);
}

TEST_CASE("KKT subgradient conditions hold at the solution") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto design = random_design(rng, 40 + static_cast<int>(rng() % 40),
                                3 + static_cast<int>(rng() % 5));
    PoissonFitOptions opt;
    // random positive penalty, roughly in the interesting range
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    opt.fixed_penalty = 0.05 + 2.0 * unif(rng);
    auto fit = fit_penalized_poisson(design, plain_columns(design.n_columns), opt);
    auto score = poisson_score(design, fit);
    std::vector<double> beta(static_cast<size_t>(design.n_columns), 0.0);
    for (size_t i = 0; i < fit.coef_index.size(); ++i) {
      beta[static_cast<size_t>(fit.coef_index[i])] = fit.coef_value[i];
    }
    for (int c = 0; c < design.n_columns; ++c) {
      if (beta[static_cast<size_t>(c)] == 0.0) {
        CHECK(std::abs(score[static_cast<size_t>(c)]) <= *opt.fixed_penalty + 1e-6);
      } else {
        double sign = beta[static_cast<size_t>(c)] > 0 ? 1.0 : -1.0;
        CHECK(std::abs(score[static_cast<size_t>(c)] + sign * *opt.fixed_penalty) <= 1e-6);
      }
    }
  }
}

TEST_CASE("coordinate descent never increases the objective") {
  std::mt19937_64 rng(13);
  auto design = random_design(rng, 60, 6);
  PoissonFitOptions opt;
  opt.fixed_penalty = 0.5;
  std::vector<double> trace;
  opt.objective_trace = &trace;
  auto fit = fit_penalized_poisson(design, plain_columns(6), opt);
  (void)fit;
  REQUIRE(trace.size() >= 2);
  for (size_t i = 1; i < trace.size(); ++i) {
    CHECK(trace[i] <= trace[i - 1] + 1e-10);
  }
}

TEST_CASE("l1 norm is non-increasing along an increasing penalty") {
  std::mt19937_64 rng(23);
  auto design = random_design(rng, 80, 6);
  double previous = std::numeric_limits<double>::infinity();
  for (double penalty : {0.01, 0.1, 0.5, 2.0, 10.0}) {
    PoissonFitOptions opt;
    opt.fixed_penalty = penalty;
    auto fit = fit_penalized_poisson(design, plain_columns(6), opt);
    CHECK(fit.l1_norm <= previous + 1e-8);
    previous = fit.l1_norm;
  }
}

TEST_CASE("cross-validation selects a model and reports losses") {
  std::mt19937_64 rng(37);
  auto design = random_design(rng, 400, 5, 1.2);
  PoissonFitOptions opt;
  opt.n_penalties = 20;
  opt.cv_folds = 4;
  auto fit = fit_penalized_poisson(design, plain_columns(5), opt);
  CHECK(std::isfinite(fit.cv_loss));
  CHECK(std::isfinite(fit.null_cv_loss));
  CHECK(fit.cv_loss <= fit.null_cv_loss + 1e-9);
  CHECK(fit.penalty > 0.0);

  // deterministic given the fold seed
  auto fit2 = fit_penalized_poisson(design, plain_columns(5), opt);
  CHECK(fit.intercept == fit2.intercept);
  CHECK(fit.coef_value == fit2.coef_value);
  CHECK(fit.penalty == fit2.penalty);
}

TEST_CASE("history-cell invariance: equal summaries give equal rates") {
  // A fit whose only history dependence is through 1{v >= 1} must give the
  // same log-rate for any two histories in the same cell.
  HalFit fit;
  BasisColumn hist;
  hist.factors.push_back({IndicatorFactor::Domain::History, 0, 1.0});
  fit.columns = {hist};
  fit.intercept = -0.3;
  fit.coef_index = {0};
  fit.coef_value = {0.8};
  std::vector<double> x{0.2};
  CHECK(fit.log_rate(0.5, 1.0, x) == fit.log_rate(0.9, 1.0, x));
  CHECK(fit.log_rate(0.5, 2.0, x) == fit.log_rate(0.5, 7.0, x));
  CHECK(fit.log_rate(0.5, 0.0, x) != fit.log_rate(0.5, 1.0, x));
}
