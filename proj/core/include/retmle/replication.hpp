#pragma once

#include "retmle/simulation.hpp"
#include "retmle/tmle.hpp"

namespace retmle {

/// HAL configuration knobs shared by the CLI and the replication harness.
/// Defaults follow the estimator's standard settings; desk_scale() trims them
/// for Monte Carlo studies.
struct HalSettings {
  int time_knots = 100;
  int covariate_knots = 10;
  int interaction_order = 2;
  int n_penalties = 50;
  double penalty_min_ratio = 1e-4;
  int cv_folds = 5;
  std::uint64_t fold_seed = 1;

  static HalSettings desk_scale();
};

enum class EstimatorKind { Unadjusted, WorkingTmle, OracleTmle, MisspecifiedTmle, HalTmle };

/// Names accepted by the harness: unadjusted, working_tmle, tmle_oracle_form,
/// tmle_misspecified, hal_tmle.
EstimatorKind estimator_from_name(const std::string& name);
const char* estimator_name(EstimatorKind kind);

struct ReplicationSettings {
  DgpSpec dgp = DgpSpec::primary();
  int n = 500;
  int reps = 200;
  std::uint64_t seed = 1;
  std::vector<EstimatorKind> estimators = {EstimatorKind::Unadjusted, EstimatorKind::WorkingTmle,
                                           EstimatorKind::OracleTmle, EstimatorKind::HalTmle};
  int a_star = 1;
  int threads = 0;
  int mc_size = 1000000;
  std::uint64_t mc_seed = 777;
  std::optional<double> psi_true;  // skip the Monte Carlo oracle when given
  HalSettings hal = HalSettings::desk_scale();
  int max_iter = 20;
  double weight_cap = 50.0;
  int parametric_time_knots = 16;
};

struct ReplicationRow {
  int rep = 0;
  EstimatorKind estimator = EstimatorKind::Unadjusted;
  bool ok = false;
  std::string error;
  double psi = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0;
  bool covered = false;
  int iterations = 0;
  double pn_eic = 0.0;
  bool stopped_by_criterion = true;
};

struct EstimatorAggregate {
  EstimatorKind estimator = EstimatorKind::Unadjusted;
  int n_ok = 0, n_failed = 0;
  double mean_psi = 0.0, bias = 0.0, sd = 0.0, mse = 0.0, coverage = 0.0;
  double mean_iterations = 0.0;
  double eic_solved_fraction = 0.0;  // stopped by the criterion in <= max_iter
};

struct ReplicationResult {
  double psi_true = 0.0;
  double psi_true_mc_se = 0.0;
  std::vector<ReplicationRow> rows;
  std::vector<EstimatorAggregate> aggregates;
  ReplicationSettings settings;
};

ReplicationResult replicate_study(const ReplicationSettings& settings);

/// One estimator applied to one dataset; used per replication and by the CLI.
TmleReport estimate_dataset(std::span<const SubjectPath> paths, const PooledGrid& grid,
                            EstimatorKind estimator, int a_star, const HalSettings& hal,
                            const TmleOptions& tmle_options, int parametric_time_knots,
                            bool quadratic_event_l1 = true);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace retmle
