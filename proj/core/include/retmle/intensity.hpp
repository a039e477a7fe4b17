#pragma once

#include <map>
#include <memory>

#include "retmle/nonparametric.hpp"
#include "retmle/poisson_fit.hpp"

namespace retmle {

/// A fitted intensity exposing discrete cumulative-intensity increments on a
/// pooled grid, conditionally on the capped history state, treatment and
/// baseline covariates. Increments always lie in [0, 1 - increment_margin].
class IntensityModel {
 public:
  static constexpr double increment_margin = 1e-8;

  virtual ~IntensityModel() = default;

  /// Fill out[k] = dLambda(T_(k) | state j, a, covariates) for k = 0..K-1.
  virtual void increments(const PooledGrid& grid, int state_j, int a,
                          std::span<const double> covariates,
                          std::span<double> out) const = 0;
};

/// Log-linear intensity from a Poisson fit:
/// dLambda_k = exp(f(T_(k), j-1, (L, a))) * (T_(k) - T_(k-1)), clamped.
class PoissonIntensity : public IntensityModel {
 public:
  explicit PoissonIntensity(HalFit fit);

  void increments(const PooledGrid& grid, int state_j, int a,
                  std::span<const double> covariates, std::span<double> out) const override;

  const HalFit& fit() const { return fit_; }

 private:
  HalFit fit_;
  // Coefficient entries split for piecewise-constant-in-time evaluation.
  struct TimedEntry {
    double threshold;
    size_t coef;
  };
  std::vector<size_t> static_entries_;
  std::vector<TimedEntry> timed_entries_;  // sorted by threshold
};

/// State- and covariate-free increments read off per-arm step functions
/// (e.g. stratified Nelson-Aalen output). Increment at T_(k) is the jump of
/// the arm's cumulative function at T_(k).
class StepIntensity : public IntensityModel {
 public:
  void set_arm(int a, const StepFunction& cumulative, const PooledGrid& grid);
  /// Direct per-grid increments for an arm.
  void set_arm_increments(int a, std::vector<double> increments);

  void increments(const PooledGrid& grid, int state_j, int a,
                  std::span<const double> covariates, std::span<double> out) const override;

 private:
  std::map<int, std::vector<double>> by_arm_;
};

/// Fluctuated intensity dLambda -> min(exp(eps) dLambda, 1 - margin), with
/// step composition folded into a single (scale, cap) pair so repeated
/// targeting steps stay exact.
class TargetedIntensity : public IntensityModel {
 public:
  TargetedIntensity(std::shared_ptr<const IntensityModel> base, std::vector<double> eps_steps);

  void increments(const PooledGrid& grid, int state_j, int a,
                  std::span<const double> covariates, std::span<double> out) const override;

  const std::vector<double>& steps() const { return steps_; }
  const std::shared_ptr<const IntensityModel>& base() const { return base_; }
  double scale() const { return scale_; }

 private:
  std::shared_ptr<const IntensityModel> base_;
  std::vector<double> steps_;
  double scale_ = 1.0;
  double cap_ = 1.0 - increment_margin;
};

/// Appends one multiplicative fluctuation step, flattening nested wrappers.
std::shared_ptr<const IntensityModel> apply_multiplicative_step(
    std::shared_ptr<const IntensityModel> model, double eps);

}  // namespace retmle
