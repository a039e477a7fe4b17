#pragma once

#include "retmle/intensity.hpp"
#include "retmle/treatment.hpp"

namespace retmle {

/// Death and recurrent-event increments dLambda_(k,j)(a, L) on a pooled grid
/// for one (treatment, subject) pair. Entries lie in [0, 1 - margin);
/// k indexes grid times 0..K-1, states j run 1..J.
struct IncrementMatrix {
  int K = 0;
  int J = 1;
  std::vector<double> death;  // K*J, row-major over k
  std::vector<double> event;

  double d(int k, int j) const { return death[static_cast<size_t>(k * J + j - 1)]; }
  double y(int k, int j) const { return event[static_cast<size_t>(k * J + j - 1)]; }
  double& d_ref(int k, int j) { return death[static_cast<size_t>(k * J + j - 1)]; }
  double& y_ref(int k, int j) { return event[static_cast<size_t>(k * J + j - 1)]; }
};

IncrementMatrix make_increment_matrix(const IntensityModel& death_model,
                                      const IntensityModel& event_model,
                                      const PooledGrid& grid, int count_cap, int treatment,
                                      std::span<const double> covariates);

/// One row of the (J+1)x(J+1) one-step transition matrix for state j:
/// out must have J+1 entries. For j <= J-1 the row carries (1-d)(1-y) at j,
/// (1-d)y at j+1 and at J+1; for j = J it carries (1-d) at J and (1-d)y at
/// J+1; row J+1 is the unit vector at J+1.
void transition_row(int j, int J, double d, double y, std::span<double> out);

/// Z_(k,j): expected events at opportunities k..K-1 under the intervention,
/// given at risk entering grid index k in state j. Stored for k = 0..K with
/// Z_(K,j) = 0; the augmented constant coordinate is implicit.
struct GcompTable {
  int K = 0;
  int J = 1;
  std::vector<double> values;  // (K+1)*J

  double z(int k, int j) const { return values[static_cast<size_t>(k * J + j - 1)]; }
  double z11() const { return z(0, 1); }
};

GcompTable backward_recursion(const IncrementMatrix& inc);

struct CleverPair {
  double h_death = 0.0;
  double h_event = 0.0;
};

/// Clever covariates at grid index k for a subject observed in state j just
/// before T_(k). Computed from the row vectors contracting Z_(k+1).
CleverPair clever_covariates(const GcompTable& table, const IncrementMatrix& inc, int k,
                             int state_j);

struct PluginResult {
  double psi = 0.0;
  /// Per-subject intervention-specific conditional means E[N^y(tau) | L_i].
  std::vector<double> subject_means;
};

/// z11 per subject and intervention arm, row-major over subjects.
struct GcompSummary {
  std::vector<int> arms;
  std::vector<double> z11;  // n_subjects x arms.size()

  double value(size_t subject, int arm) const;
};

/// (1/n) sum_i sum_a pi*(a | L_i) Z11(a, L_i).
PluginResult plugin_psi(std::span<const SubjectPath> paths, const InterventionPolicy& pi_star,
                        const GcompSummary& summary);

}  // namespace retmle
