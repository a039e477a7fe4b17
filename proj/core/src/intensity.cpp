#include "retmle/intensity.hpp"

#include <algorithm>
#include <cmath>

namespace retmle {

PoissonIntensity::PoissonIntensity(HalFit fit) : fit_(std::move(fit)) {
  for (size_t i = 0; i < fit_.coef_index.size(); ++i) {
    const auto& col = fit_.columns[static_cast<size_t>(fit_.coef_index[i])];
    if (col.has_time_factor()) {
      timed_entries_.push_back({col.time_threshold(), i});
    } else {
      static_entries_.push_back(i);
    }
  }
  std::stable_sort(timed_entries_.begin(), timed_entries_.end(),
                   [](const TimedEntry& a, const TimedEntry& b) { return a.threshold < b.threshold; });
}

void PoissonIntensity::increments(const PooledGrid& grid, int state_j, int a,
                                  std::span<const double> covariates,
                                  std::span<double> out) const {
  std::vector<double> x(covariates.begin(), covariates.end());
  x.push_back(static_cast<double>(a));
  const double v = static_cast<double>(state_j - 1);

  double eta = fit_.intercept;
  for (size_t i : static_entries_) {
    const auto& col = fit_.columns[static_cast<size_t>(fit_.coef_index[i])];
    eta += fit_.coef_value[i] * col.value_static(v, x);
  }
  size_t next_timed = 0;
  const int K = grid.size();
  for (int k = 0; k < K; ++k) {
    const double t = grid.times[static_cast<size_t>(k)];
    while (next_timed < timed_entries_.size() && timed_entries_[next_timed].threshold <= t) {
      size_t i = timed_entries_[next_timed].coef;
      const auto& col = fit_.columns[static_cast<size_t>(fit_.coef_index[i])];
      eta += fit_.coef_value[i] * col.value_static(v, x);
      ++next_timed;
    }
    double inc = std::exp(eta) * grid.interval_length(k);
    out[static_cast<size_t>(k)] = std::min(inc, 1.0 - increment_margin);
  }
}

void StepIntensity::set_arm(int a, const StepFunction& cumulative, const PooledGrid& grid) {
  std::vector<double> inc(static_cast<size_t>(grid.size()), 0.0);
  for (int k = 0; k < grid.size(); ++k) {
    inc[static_cast<size_t>(k)] = cumulative.jump_at(grid.times[static_cast<size_t>(k)]);
  }
  set_arm_increments(a, std::move(inc));
}

void StepIntensity::set_arm_increments(int a, std::vector<double> increments) {
  for (double& v : increments) v = std::clamp(v, 0.0, 1.0 - increment_margin);
  by_arm_[a] = std::move(increments);
}

void StepIntensity::increments(const PooledGrid& grid, int state_j, int a,
                               std::span<const double> covariates,
                               std::span<double> out) const {
  (void)state_j;
  (void)covariates;
  auto it = by_arm_.find(a);
  if (it == by_arm_.end()) throw DataError("StepIntensity: no increments for this arm");
  if (it->second.size() != static_cast<size_t>(grid.size())) {
    throw DataError("StepIntensity: grid size mismatch");
  }
  std::copy(it->second.begin(), it->second.end(), out.begin());
}

TargetedIntensity::TargetedIntensity(std::shared_ptr<const IntensityModel> base,
                                     std::vector<double> eps_steps)
    : base_(std::move(base)), steps_(std::move(eps_steps)) {
  for (double eps : steps_) {
    scale_ *= std::exp(eps);
    cap_ = std::min(std::exp(eps) * cap_, 1.0 - increment_margin);
  }
}

void TargetedIntensity::increments(const PooledGrid& grid, int state_j, int a,
                                   std::span<const double> covariates,
                                   std::span<double> out) const {
  base_->increments(grid, state_j, a, covariates, out);
  for (double& v : out) v = std::min(scale_ * v, cap_);
}

std::shared_ptr<const IntensityModel> apply_multiplicative_step(
    std::shared_ptr<const IntensityModel> model, double eps) {
  if (auto targeted = std::dynamic_pointer_cast<const TargetedIntensity>(model)) {
    auto steps = targeted->steps();
    steps.push_back(eps);
    return std::make_shared<TargetedIntensity>(targeted->base(), std::move(steps));
  }
  return std::make_shared<TargetedIntensity>(std::move(model), std::vector<double>{eps});
}

}  // namespace retmle
