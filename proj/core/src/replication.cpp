#include "retmle/replication.hpp"

#include <cmath>

#include "retmle/nonparametric.hpp"
#include "retmle/threading.hpp"

namespace retmle {

HalSettings HalSettings::desk_scale() {
  HalSettings s;
  s.time_knots = 12;
  s.covariate_knots = 4;
  s.n_penalties = 30;
  s.penalty_min_ratio = 1e-3;
  s.cv_folds = 5;
  return s;
}

EstimatorKind estimator_from_name(const std::string& name) {
  if (name == "unadjusted") return EstimatorKind::Unadjusted;
  if (name == "working_tmle") return EstimatorKind::WorkingTmle;
  if (name == "tmle_oracle_form") return EstimatorKind::OracleTmle;
  if (name == "tmle_misspecified") return EstimatorKind::MisspecifiedTmle;
  if (name == "hal_tmle") return EstimatorKind::HalTmle;
  throw DataError("unknown estimator '" + name + "'");
}

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Unadjusted: return "unadjusted";
    case EstimatorKind::WorkingTmle: return "working_tmle";
    case EstimatorKind::OracleTmle: return "tmle_oracle_form";
    case EstimatorKind::MisspecifiedTmle: return "tmle_misspecified";
    case EstimatorKind::HalTmle: return "hal_tmle";
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

// X layout in designs: (L1, L2, L3, A).
constexpr int kL1 = 0;
constexpr int kTreatIdx = 3;

BasisColumn raw_column(int coord, int power) {
  BasisColumn col;
  col.raw_coord = coord;
  col.raw_power = power;
  return col;
}

BasisColumn history_column() {
  BasisColumn col;
  col.factors.push_back({IndicatorFactor::Domain::History, 0, 1.0});
  return col;
}

std::vector<BasisColumn> parametric_columns(const PooledGrid& grid, int time_knots,
                                            EventKind kind, bool with_history,
                                            bool quadratic_l1) {
  BasisSpec time_only;
  time_only.time_knots = thin_time_knots(grid, time_knots);
  time_only.max_interaction_order = 1;
  auto columns = time_only.enumerate();
  switch (kind) {
    case EventKind::Recurrent:
      columns.push_back(raw_column(kTreatIdx, 1));
      columns.push_back(raw_column(kL1, quadratic_l1 ? 2 : 1));
      break;
    case EventKind::Death:
      columns.push_back(raw_column(kTreatIdx, 1));
      columns.push_back(raw_column(kL1, 1));
      break;
    case EventKind::Censor:
      columns.push_back(raw_column(kL1, 1));
      break;
  }
  if (with_history) columns.push_back(history_column());
  return columns;
}

std::shared_ptr<const IntensityModel> fit_process(std::span<const SubjectPath> paths,
                                                  const PooledGrid& grid, EventKind kind,
                                                  std::vector<BasisColumn> columns,
                                                  int count_cap,
                                                  const PoissonFitOptions& options) {
  auto design = expand_design(paths, grid, kind, columns, count_cap);
  auto fit = fit_penalized_poisson(design, std::move(columns), options);
  return std::make_shared<PoissonIntensity>(std::move(fit));
}

TmleReport run_unadjusted(std::span<const SubjectPath> paths, const PooledGrid& grid,
                          int a_star, const TmleOptions& options) {
  StepFunction na_death = nelson_aalen(paths, EventKind::Death, a_star, grid.horizon);
  StepFunction na_event = nelson_aalen(paths, EventKind::Recurrent, a_star, grid.horizon);
  StepFunction na_censor = nelson_aalen(paths, EventKind::Censor, a_star, grid.horizon);

  auto death = std::make_shared<StepIntensity>();
  death->set_arm(a_star, na_death, grid);
  // Event increments are rescaled so that the death-first plug-in reproduces
  // sum_k S(T_(k)-) dLambda^y(T_(k)) exactly: (1-d) y' = dLambda^y.
  std::vector<double> event_inc(static_cast<size_t>(grid.size()), 0.0);
  for (int k = 0; k < grid.size(); ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    const double jump_y = na_event.jump_at(t);
    if (jump_y > 0.0) {
      const double jump_d = na_death.jump_at(t);
      event_inc[static_cast<size_t>(k)] = jump_y / (1.0 - jump_d);
    }
  }
  auto event = std::make_shared<StepIntensity>();
  event->set_arm_increments(a_star, std::move(event_inc));
  auto censor = std::make_shared<StepIntensity>();
  censor->set_arm(a_star, na_censor, grid);

  NuisanceSet nuis;
  nuis.event = event;
  nuis.death = death;
  nuis.censor = censor;
  nuis.treatment = std::make_shared<EmpiricalTreatment>(paths);
  nuis.intervention = InterventionPolicy::degenerate(a_star);

  TmleOptions opt = options;
  opt.count_cap = 1;
  return evaluate_plugin_report(paths, grid, nuis, opt);
}

}  // namespace

TmleReport estimate_dataset(std::span<const SubjectPath> paths, const PooledGrid& grid,
                            EstimatorKind estimator, int a_star, const HalSettings& hal,
                            const TmleOptions& tmle_options, int parametric_time_knots,
                            bool quadratic_event_l1) {
  if (estimator == EstimatorKind::Unadjusted) {
    return run_unadjusted(paths, grid, a_star, tmle_options);
  }

  NuisanceSet nuis;
  nuis.treatment = std::make_shared<EmpiricalTreatment>(paths);
  nuis.intervention = InterventionPolicy::degenerate(a_star);
  TmleOptions opt = tmle_options;

  if (estimator == EstimatorKind::HalTmle) {
    opt.count_cap = 2;  // HAL history summary is 1{N^y(t-) >= 1}
    auto basis = make_default_basis(paths, grid, opt.count_cap, hal.time_knots,
                                    hal.covariate_knots, hal.interaction_order);
    auto columns = basis.enumerate();
    PoissonFitOptions fit_opt;
    fit_opt.n_penalties = hal.n_penalties;
    fit_opt.penalty_min_ratio = hal.penalty_min_ratio;
    fit_opt.cv_folds = hal.cv_folds;
    fit_opt.fold_seed = hal.fold_seed;
    nuis.event = fit_process(paths, grid, EventKind::Recurrent, columns, opt.count_cap, fit_opt);
    nuis.death = fit_process(paths, grid, EventKind::Death, columns, opt.count_cap, fit_opt);
    nuis.censor = fit_process(paths, grid, EventKind::Censor, columns, opt.count_cap, fit_opt);
    return run_tmle(paths, grid, nuis, opt);
  }

  const bool working = estimator == EstimatorKind::WorkingTmle;
  const bool misspec = estimator == EstimatorKind::MisspecifiedTmle;
  opt.count_cap = working ? 1 : 2;
  PoissonFitOptions fit_opt;
  fit_opt.fixed_penalty = 0.0;
  const bool event_quadratic = misspec ? !quadratic_event_l1 : quadratic_event_l1;
  nuis.event = fit_process(paths, grid, EventKind::Recurrent,
                           parametric_columns(grid, parametric_time_knots, EventKind::Recurrent,
                                              !working, event_quadratic),
                           opt.count_cap, fit_opt);
  nuis.death = fit_process(paths, grid, EventKind::Death,
                           parametric_columns(grid, parametric_time_knots, EventKind::Death,
                                              !working, quadratic_event_l1),
                           opt.count_cap, fit_opt);
  nuis.censor = fit_process(paths, grid, EventKind::Censor,
                            parametric_columns(grid, parametric_time_knots, EventKind::Censor,
                                               !working, quadratic_event_l1),
                            opt.count_cap, fit_opt);
  return run_tmle(paths, grid, nuis, opt);
}

ReplicationResult replicate_study(const ReplicationSettings& settings) {
  ReplicationResult result;
  result.settings = settings;
  if (settings.reps <= 0) return result;

  if (settings.psi_true) {
    result.psi_true = *settings.psi_true;
    result.psi_true_mc_se = 0.0;
  } else {
    auto truth = true_psi(settings.dgp, settings.a_star, settings.mc_size, settings.mc_seed);
    result.psi_true = truth.psi;
    result.psi_true_mc_se = truth.mc_se;
  }

  const size_t n_est = settings.estimators.size();
  result.rows.resize(static_cast<size_t>(settings.reps) * n_est);

  parallel_for(settings.reps, settings.threads, [&](int begin, int end) {
    TmleOptions tmle_opt;
    tmle_opt.max_iter = settings.max_iter;
    tmle_opt.weight_cap = settings.weight_cap;
    tmle_opt.threads = 1;
    for (int rep = begin; rep < end; ++rep) {
      auto paths = simulate(settings.dgp, settings.n,
                            derive_seed(settings.seed, static_cast<std::uint64_t>(rep)));
      PooledGrid grid;
      bool grid_ok = true;
      std::string grid_error;
      try {
        grid = build_grid(paths, settings.dgp.tau);
      } catch (const std::exception& e) {
        grid_ok = false;
        grid_error = e.what();
      }
      for (size_t ei = 0; ei < n_est; ++ei) {
        auto& row = result.rows[static_cast<size_t>(rep) * n_est + ei];
        row.rep = rep;
        row.estimator = settings.estimators[ei];
        if (!grid_ok) {
          row.ok = false;
          row.error = grid_error;
          continue;
        }
        try {
          TmleReport rep_out =
              estimate_dataset(paths, grid, settings.estimators[ei], settings.a_star,
                               settings.hal, tmle_opt, settings.parametric_time_knots,
                               settings.dgp.quadratic_event_l1);
          row.ok = true;
          row.psi = rep_out.psi_hat;
          row.se = rep_out.se;
          row.ci_low = rep_out.ci_low;
          row.ci_high = rep_out.ci_high;
          row.covered = rep_out.ci_low <= result.psi_true && result.psi_true <= rep_out.ci_high;
          row.iterations = rep_out.iterations;
          row.pn_eic = rep_out.pn_eic;
          row.stopped_by_criterion = rep_out.stopped_by == StopReason::Criterion;
        } catch (const std::exception& e) {
          row.ok = false;
          row.error = e.what();
        }
      }
    }
  });

  for (size_t ei = 0; ei < n_est; ++ei) {
    EstimatorAggregate agg;
    agg.estimator = settings.estimators[ei];
    double sum = 0.0, sum_sq = 0.0, sum_mse = 0.0, sum_cov = 0.0, sum_iter = 0.0,
           sum_solved = 0.0;
    for (int rep = 0; rep < settings.reps; ++rep) {
      const auto& row = result.rows[static_cast<size_t>(rep) * n_est + ei];
      if (!row.ok) {
        ++agg.n_failed;
        continue;
      }
      ++agg.n_ok;
      sum += row.psi;
      sum_sq += row.psi * row.psi;
      sum_mse += (row.psi - result.psi_true) * (row.psi - result.psi_true);
      sum_cov += row.covered ? 1.0 : 0.0;
      sum_iter += row.iterations;
      sum_solved += row.stopped_by_criterion ? 1.0 : 0.0;
    }
    if (agg.n_ok > 0) {
      agg.mean_psi = sum / agg.n_ok;
      agg.bias = agg.mean_psi - result.psi_true;
      const double var =
          agg.n_ok > 1 ? (sum_sq - sum * sum / agg.n_ok) / (agg.n_ok - 1) : 0.0;
      agg.sd = std::sqrt(std::max(0.0, var));
      agg.mse = sum_mse / agg.n_ok;
      agg.coverage = sum_cov / agg.n_ok;
      agg.mean_iterations = sum_iter / agg.n_ok;
      agg.eic_solved_fraction = sum_solved / agg.n_ok;
    }
    result.aggregates.push_back(agg);
  }
  return result;
}

}  // namespace retmle
