#include "retmle/nonparametric.hpp"

#include <algorithm>
#include <map>

namespace retmle {

double StepFunction::value(double t) const {
  double v = baseline;
  for (size_t i = 0; i < jump_times.size() && jump_times[i] <= t; ++i) v += jump_sizes[i];
  return v;
}

double StepFunction::jump_at(double t) const {
  auto it = std::lower_bound(jump_times.begin(), jump_times.end(), t);
  if (it != jump_times.end() && *it == t) {
    return jump_sizes[static_cast<size_t>(it - jump_times.begin())];
  }
  return 0.0;
}

StepFunction nelson_aalen(std::span<const SubjectPath> paths, EventKind kind,
                          int stratum, double horizon) {
  std::vector<const SubjectPath*> members;
  for (const auto& p : paths) {
    if (p.treatment == stratum) members.push_back(&p);
  }
  if (members.empty()) throw DataError("nelson_aalen: empty stratum");

  std::map<double, int> event_counts;
  for (const auto* p : members) {
    for (const auto& rec : p->records) {
      if (rec.kind == kind && rec.time <= horizon) ++event_counts[rec.time];
    }
  }
  StepFunction out;
  for (const auto& [t, n_events] : event_counts) {
    int n_risk = 0;
    for (const auto* p : members) {
      if (at_risk(*p, t)) ++n_risk;
    }
    if (n_risk > 0) {
      out.jump_times.push_back(t);
      out.jump_sizes.push_back(static_cast<double>(n_events) / n_risk);
    }
  }
  return out;
}

double product_integral(const StepFunction& cumulative, double t) {
  double prod = 1.0;
  for (size_t i = 0; i < cumulative.jump_times.size() && cumulative.jump_times[i] <= t; ++i) {
    double jump = cumulative.jump_sizes[i];
    if (jump < 0.0 || jump > 1.0) {
      throw DataError("product_integral: jump outside [0,1]");
    }
    prod *= 1.0 - jump;
  }
  return prod;
}

double product_integral_before(const StepFunction& cumulative, double t) {
  double prod = 1.0;
  for (size_t i = 0; i < cumulative.jump_times.size() && cumulative.jump_times[i] < t; ++i) {
    double jump = cumulative.jump_sizes[i];
    if (jump < 0.0 || jump > 1.0) {
      throw DataError("product_integral: jump outside [0,1]");
    }
    prod *= 1.0 - jump;
  }
  return prod;
}

double unadjusted_marginal_mean(std::span<const SubjectPath> paths, int stratum,
                                double horizon) {
  StepFunction death = nelson_aalen(paths, EventKind::Death, stratum, horizon);
  StepFunction recurrent = nelson_aalen(paths, EventKind::Recurrent, stratum, horizon);
  double total = 0.0;
  for (size_t i = 0; i < recurrent.jump_times.size(); ++i) {
    double t = recurrent.jump_times[i];
    if (t > horizon) break;
    total += product_integral_before(death, t) * recurrent.jump_sizes[i];
  }
  return total;
}

}  // namespace retmle
