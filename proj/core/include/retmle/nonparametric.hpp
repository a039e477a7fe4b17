#pragma once

#include <span>

#include "retmle/event_data.hpp"

namespace retmle {

/// Right-continuous piecewise-constant cumulative function:
/// value(t) = baseline + sum of jumps at times <= t.
struct StepFunction {
  double baseline = 0.0;
  std::vector<double> jump_times;  // strictly increasing
  std::vector<double> jump_sizes;

  double value(double t) const;
  /// Jump size at exactly t (0 when t is not a jump time).
  double jump_at(double t) const;
};

/// Stratified Nelson-Aalen cumulative hazard/rate for one event kind:
/// jump (#events of kind at t) / (#at risk at t) at every event time of
/// that kind in the stratum, up to the horizon.
StepFunction nelson_aalen(std::span<const SubjectPath> paths, EventKind kind,
                          int stratum, double horizon);

/// prod_{s<=t} (1 - dLambda(s)). Jumps must lie in [0,1].
double product_integral(const StepFunction& cumulative, double t);

/// Left limit prod_{s<t} (1 - dLambda(s)), excluding the jump at t.
double product_integral_before(const StepFunction& cumulative, double t);

/// sum_k S^d(T_k-) dLambda^y(T_k) over the stratum's recurrent-event times
/// up to the horizon, with S^d the Kaplan-Meier death survival and
/// Lambda^y the recurrent Nelson-Aalen. Valid under independent censoring.
double unadjusted_marginal_mean(std::span<const SubjectPath> paths, int stratum,
                                double horizon);

}  // namespace retmle
