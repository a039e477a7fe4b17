#pragma once

#include <map>
#include <memory>

#include "retmle/event_data.hpp"

namespace retmle {

/// Fitted treatment mechanism pi(a | L).
class TreatmentModel {
 public:
  virtual ~TreatmentModel() = default;
  virtual double prob(int a, std::span<const double> covariates) const = 0;
};

/// Marginal treatment frequencies; appropriate for randomized designs.
class EmpiricalTreatment : public TreatmentModel {
 public:
  explicit EmpiricalTreatment(std::span<const SubjectPath> paths);
  double prob(int a, std::span<const double> covariates) const override;

 private:
  std::map<int, double> freq_;
};

/// Intercept + main-terms logistic model for binary treatment in {0,1},
/// fitted by Newton-Raphson on the unpenalized likelihood.
class LogisticTreatment : public TreatmentModel {
 public:
  static std::shared_ptr<LogisticTreatment> fit(std::span<const SubjectPath> paths,
                                                int max_iter = 100, double tol = 1e-10);
  double prob(int a, std::span<const double> covariates) const override;
  std::span<const double> coefficients() const { return coef_; }

 private:
  std::vector<double> coef_;  // intercept first
};

/// Intervention distribution pi*(a | L); a finite distribution over arms,
/// degenerate by default.
class InterventionPolicy {
 public:
  static InterventionPolicy degenerate(int a_star);
  static InterventionPolicy mixture(std::vector<std::pair<int, double>> arm_probs);

  double prob(int a, std::span<const double> covariates) const;
  const std::vector<std::pair<int, double>>& support() const { return arm_probs_; }

 private:
  std::vector<std::pair<int, double>> arm_probs_;
};

}  // namespace retmle
