#pragma once

#include <cstdint>
#include <optional>

#include "retmle/event_data.hpp"

namespace retmle {

struct WeibullBaseline {
  double shape = 1.0;
  double scale = 1.0;

  double cumulative(double t) const;
  /// Smallest t with cumulative(t) >= h.
  double inverse_cumulative(double h) const;
};

/// One multiplicative-intensity process:
/// lambda(t | F) = baseline(t) * exp(alpha + beta_treat*A + beta_l1*g(L1)
///                 + beta_history*1{N^y(t-) >= 1}),
/// with g(L1) = L1^2 or L1 depending on the owning spec.
struct ProcessSpec {
  WeibullBaseline baseline;
  double alpha = 0.0;
  double beta_treat = 0.0;
  double beta_l1 = 0.0;
  double beta_history = 0.0;
};

/// Covariates: L1 ~ Unif(-1,1), L2, L3 ~ Unif(0,1); A randomized with
/// P(A=1) = p_treat.
struct DgpSpec {
  ProcessSpec event;   // recurrent process, uses L1^2 when quadratic_event_l1
  ProcessSpec death;
  ProcessSpec censor;
  bool quadratic_event_l1 = true;
  double p_treat = 0.5;
  double tau = 1.2;

  /// Dependent-censoring primary setting.
  static DgpSpec primary();
  /// beta^c_history = beta^d_l1 = 0.
  static DgpSpec independent_censoring();
};

struct SimulateOptions {
  std::optional<int> forced_treatment;  // assign every subject this arm
  bool censoring_off = false;
};

std::vector<SubjectPath> simulate(const DgpSpec& spec, int n, std::uint64_t seed,
                                  const SimulateOptions& options = {});

struct TruePsiResult {
  double psi = 0.0;
  double mc_se = 0.0;
};

/// Monte Carlo mean of N^y(tau) under treatment arm a_star with the
/// censoring process switched off.
TruePsiResult true_psi(const DgpSpec& spec, int a_star, int mc_size, std::uint64_t seed);

}  // namespace retmle
