#include <doctest.h>

#include "retmle/intensity.hpp"
#include "retmle/json_io.hpp"

using namespace retmle;

TEST_CASE("tmle report serializes the documented keys") {
  TmleReport rep;
  rep.psi_hat = 1.25;
  rep.se = 0.1;
  rep.ci_low = 1.054;
  rep.ci_high = 1.446;
  rep.iterations = 3;
  rep.pn_eic = 1e-5;
  rep.stopped_by = StopReason::Criterion;
  rep.truncated_weights = 2;
  auto text = to_json(rep);
  CHECK(text.find("\"psi_hat\"") != std::string::npos);
  CHECK(text.find("\"ci95\"") != std::string::npos);
  CHECK(text.find("\"stopped_by\": \"criterion\"") != std::string::npos);
  CHECK(text.find("\"truncated_weights\": 2") != std::string::npos);
}

TEST_CASE("hal fit round-trips through JSON") {
  HalFit fit;
  BasisColumn time_col;
  time_col.factors.push_back({IndicatorFactor::Domain::Time, 0, 0.4});
  BasisColumn interaction;
  interaction.factors.push_back({IndicatorFactor::Domain::Covariate, 1, 0.25});
  interaction.factors.push_back({IndicatorFactor::Domain::History, 0, 1.0});
  BasisColumn raw;
  raw.raw_coord = 0;
  raw.raw_power = 2;
  fit.columns = {time_col, interaction, raw};
  fit.intercept = -1.5;
  fit.coef_index = {0, 2};
  fit.coef_value = {0.7, -0.2};
  fit.penalty = 0.05;
  fit.l1_norm = 0.9;

  auto restored = hal_fit_from_json(to_json(fit));
  std::vector<double> x{0.5, 0.3};
  for (double t : {0.1, 0.5, 0.9}) {
    for (double v : {0.0, 1.0, 2.0}) {
      CHECK(restored.log_rate(t, v, x) == doctest::Approx(fit.log_rate(t, v, x)).epsilon(1e-15));
    }
  }
  CHECK(restored.penalty == fit.penalty);
}

TEST_CASE("dgp specs round-trip and reject unknown keys") {
  auto spec = DgpSpec::primary();
  spec.censor.alpha = -1.25;
  auto restored = dgp_from_json(to_json(spec));
  CHECK(restored.censor.alpha == spec.censor.alpha);
  CHECK(restored.event.beta_history == spec.event.beta_history);
  CHECK(restored.tau == spec.tau);

  CHECK_THROWS_AS(dgp_from_json("{\"tau\": 1.0, \"bogus\": 2}"), DataError);
  CHECK_NOTHROW(dgp_from_json("{\"preset\": \"independent_censoring\"}"));
  CHECK_THROWS_AS(dgp_from_json("{\"preset\": \"nope\"}"), DataError);
}

TEST_CASE("replication settings round-trip") {
  ReplicationSettings s;
  s.n = 123;
  s.reps = 7;
  s.estimators = {EstimatorKind::Unadjusted, EstimatorKind::HalTmle};
  s.hal.time_knots = 9;
  s.psi_true = 1.5;
  auto restored = replication_settings_from_json(to_json(s));
  CHECK(restored.n == 123);
  CHECK(restored.reps == 7);
  CHECK(restored.estimators == s.estimators);
  CHECK(restored.hal.time_knots == 9);
  CHECK(restored.psi_true == 1.5);

  CHECK_THROWS_AS(replication_settings_from_json("{\"unknown_key\": 1}"), DataError);
}

TEST_CASE("replication csv has one line per estimator-replication") {
  ReplicationResult result;
  result.psi_true = 1.0;
  ReplicationRow ok_row;
  ok_row.rep = 0;
  ok_row.estimator = EstimatorKind::Unadjusted;
  ok_row.ok = true;
  ok_row.psi = 1.1;
  ReplicationRow bad_row;
  bad_row.rep = 0;
  bad_row.estimator = EstimatorKind::HalTmle;
  bad_row.error = "boom, with comma";
  result.rows = {ok_row, bad_row};
  auto csv = replication_csv(result);
  CHECK(csv.find("unadjusted,0,1,") != std::string::npos);
  CHECK(csv.find("hal_tmle,0,0,") != std::string::npos);
  CHECK(csv.find("boom; with comma") != std::string::npos);
}
