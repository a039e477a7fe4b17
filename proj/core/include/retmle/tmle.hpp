#pragma once

#include "retmle/gcomp.hpp"

namespace retmle {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nuisance estimators entering the targeted procedure. The censoring model
/// and the treatment mechanism are part of G and are held fixed; only the
/// death and event intensities get fluctuated.
struct NuisanceSet {
  std::shared_ptr<const IntensityModel> event;
  std::shared_ptr<const IntensityModel> death;
  std::shared_ptr<const IntensityModel> censor;
  std::shared_ptr<const TreatmentModel> treatment;
  InterventionPolicy intervention = InterventionPolicy::degenerate(1);
};

struct TmleOptions {
  int max_iter = 20;
  double weight_cap = 50.0;
  double pi_truncation = 0.01;  // predicted pi(a|L) clamped to [eta, 1-eta]
  int count_cap = 0;            // 0: 1 + max observed N^y(horizon)
  int threads = 1;
};

enum class StopReason { Criterion, MaxIter };

struct TmleReport {
  double psi_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  int iterations = 0;
  double pn_eic = 0.0;  // P_n phi* at the reported fit
  StopReason stopped_by = StopReason::Criterion;
  int truncated_weights = 0;
  double stopping_threshold = 0.0;          // s_n
  double eps_death = 0.0, eps_event = 0.0;  // accumulated log-fluctuations
  std::vector<double> eps_death_steps, eps_event_steps;
};

struct EicEvaluation {
  double psi = 0.0;
  std::vector<double> phi;  // per subject
  int truncated_weights = 0;

  double pn_eic() const;
  double variance() const;  // P_n phi*^2
};

/// Inverse-probability factor pi*(A_i|L_i) / (pi(A_i|L_i) * prod_{l<k}
/// (1 - dLambda^c(T_(l) | F_(l-1)))), truncated at the weight cap.
double clever_weight(std::span<const SubjectPath> paths, const PooledGrid& grid,
                     const NuisanceSet& nuis, size_t subject, int k,
                     const TmleOptions& options = {});

/// Efficient-influence-curve evaluation at the supplied fits (no targeting).
EicEvaluation evaluate_eic(std::span<const SubjectPath> paths, const PooledGrid& grid,
                           const NuisanceSet& nuis, const TmleOptions& options = {});

struct TargetStepResult {
  double epsilon = 0.0;
  bool degenerate = false;
  std::shared_ptr<const IntensityModel> updated;
};

/// Weighted martingale score sum_{i,k} w h^x (dN^x - dLambda^x) for one
/// process at the supplied fits. The recurrent-event score runs over at-risk
/// times excluding each subject's own death time.
double process_score(std::span<const SubjectPath> paths, const PooledGrid& grid,
                     const NuisanceSet& nuis, EventKind which, const TmleOptions& options = {});

/// One multiplicative fluctuation step for the death or recurrent intensity,
/// solving sum_{i,k} w h^x (dN^x - exp(eps) dLambda^x) = 0.
TargetStepResult target_step(std::span<const SubjectPath> paths, const PooledGrid& grid,
                             const NuisanceSet& nuis, EventKind which,
                             const TmleOptions& options = {});

/// Iterative targeting of the death and event intensities until
/// |P_n phi*| <= sigma_n / (sqrt(n) log n), then plug-in estimate, EIC
/// standard error and 95% confidence interval.
TmleReport run_tmle(std::span<const SubjectPath> paths, const PooledGrid& grid,
                    const NuisanceSet& nuis, const TmleOptions& options = {});

/// Plug-in report with no targeting: point estimate and EIC-based interval
/// at the supplied fits.
TmleReport evaluate_plugin_report(std::span<const SubjectPath> paths, const PooledGrid& grid,
                                  const NuisanceSet& nuis, const TmleOptions& options = {});

/// Z11 per (subject, intervention arm) from the backward recursion at the
/// supplied fits; input to plugin_psi.
GcompSummary gcomp_summary(std::span<const SubjectPath> paths, const PooledGrid& grid,
                           const NuisanceSet& nuis, const TmleOptions& options = {});

struct WeightReport {
  double max_weight = 0.0;          // before truncation
  double mean_weight = 0.0;
  int truncated = 0;
  size_t n_weights = 0;
  double min_censor_survival = 1.0;
  bool violation = false;
  std::vector<double> quantiles;  // 50/90/99th percentiles of untruncated weights
};

/// Positivity diagnostics over all at-risk (subject, grid-time) pairs with a
/// positive intervention numerator.
WeightReport positivity_report(std::span<const SubjectPath> paths, const PooledGrid& grid,
                               const NuisanceSet& nuis, const TmleOptions& options = {});

}  // namespace retmle
