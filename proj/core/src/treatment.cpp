#include "retmle/treatment.hpp"

#include <cmath>

namespace retmle {

EmpiricalTreatment::EmpiricalTreatment(std::span<const SubjectPath> paths) {
  if (paths.empty()) throw DataError("EmpiricalTreatment: no subjects");
  for (const auto& p : paths) freq_[p.treatment] += 1.0;
  for (auto& [a, f] : freq_) f /= static_cast<double>(paths.size());
}

double EmpiricalTreatment::prob(int a, std::span<const double>) const {
  auto it = freq_.find(a);
  return it == freq_.end() ? 0.0 : it->second;
}

namespace {

// In-place solve of the symmetric system H x = b by Gaussian elimination
// with partial pivoting. Small p only.
bool solve_linear(std::vector<double>& H, std::vector<double>& b, int p) {
  for (int col = 0; col < p; ++col) {
    int pivot = col;
    for (int r = col + 1; r < p; ++r) {
      if (std::abs(H[static_cast<size_t>(r * p + col)]) >
          std::abs(H[static_cast<size_t>(pivot * p + col)])) {
        pivot = r;
      }
    }
    if (std::abs(H[static_cast<size_t>(pivot * p + col)]) < 1e-12) return false;
    if (pivot != col) {
      for (int c = 0; c < p; ++c) {
        std::swap(H[static_cast<size_t>(col * p + c)], H[static_cast<size_t>(pivot * p + c)]);
      }
      std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(pivot)]);
    }
    for (int r = col + 1; r < p; ++r) {
      double f = H[static_cast<size_t>(r * p + col)] / H[static_cast<size_t>(col * p + col)];
      for (int c = col; c < p; ++c) {
        H[static_cast<size_t>(r * p + c)] -= f * H[static_cast<size_t>(col * p + c)];
      }
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  for (int r = p - 1; r >= 0; --r) {
    double s = b[static_cast<size_t>(r)];
    for (int c = r + 1; c < p; ++c) s -= H[static_cast<size_t>(r * p + c)] * b[static_cast<size_t>(c)];
    b[static_cast<size_t>(r)] = s / H[static_cast<size_t>(r * p + r)];
  }
  return true;
}

}  // namespace

std::shared_ptr<LogisticTreatment> LogisticTreatment::fit(std::span<const SubjectPath> paths,
                                                          int max_iter, double tol) {
  if (paths.empty()) throw DataError("LogisticTreatment: no subjects");
  for (const auto& p : paths) {
    if (p.treatment != 0 && p.treatment != 1) {
      throw DataError("LogisticTreatment: treatment values must be in {0,1}");
    }
  }
  const int d = static_cast<int>(paths.front().covariates.size());
  const int p = d + 1;
  auto model = std::make_shared<LogisticTreatment>();
  model->coef_.assign(static_cast<size_t>(p), 0.0);

  std::vector<double> H(static_cast<size_t>(p * p));
  std::vector<double> g(static_cast<size_t>(p));
  std::vector<double> xi(static_cast<size_t>(p));
  for (int iter = 0; iter < max_iter; ++iter) {
    std::fill(H.begin(), H.end(), 0.0);
    std::fill(g.begin(), g.end(), 0.0);
    for (const auto& subj : paths) {
      xi[0] = 1.0;
      for (int c = 0; c < d; ++c) xi[static_cast<size_t>(c + 1)] = subj.covariates[static_cast<size_t>(c)];
      double eta = 0.0;
      for (int c = 0; c < p; ++c) eta += model->coef_[static_cast<size_t>(c)] * xi[static_cast<size_t>(c)];
      double mu = 1.0 / (1.0 + std::exp(-eta));
      double w = std::max(mu * (1.0 - mu), 1e-10);
      double resid = static_cast<double>(subj.treatment) - mu;
      for (int r = 0; r < p; ++r) {
        g[static_cast<size_t>(r)] += xi[static_cast<size_t>(r)] * resid;
        for (int c = 0; c < p; ++c) {
          H[static_cast<size_t>(r * p + c)] += w * xi[static_cast<size_t>(r)] * xi[static_cast<size_t>(c)];
        }
      }
    }
    for (int r = 0; r < p; ++r) H[static_cast<size_t>(r * p + r)] += 1e-10;
    std::vector<double> step = g;
    if (!solve_linear(H, step, p)) break;
    double max_step = 0.0;
    for (int r = 0; r < p; ++r) {
      double s = std::clamp(step[static_cast<size_t>(r)], -10.0, 10.0);
      model->coef_[static_cast<size_t>(r)] += s;
      max_step = std::max(max_step, std::abs(s));
    }
    if (max_step < tol) break;
  }
  return model;
}

double LogisticTreatment::prob(int a, std::span<const double> covariates) const {
  double eta = coef_[0];
  for (size_t c = 0; c < covariates.size(); ++c) eta += coef_[c + 1] * covariates[c];
  double p1 = 1.0 / (1.0 + std::exp(-eta));
  if (a == 1) return p1;
  if (a == 0) return 1.0 - p1;
  return 0.0;
}

InterventionPolicy InterventionPolicy::degenerate(int a_star) {
  InterventionPolicy p;
  p.arm_probs_ = {{a_star, 1.0}};
  return p;
}

InterventionPolicy InterventionPolicy::mixture(std::vector<std::pair<int, double>> arm_probs) {
  double total = 0.0;
  for (const auto& [a, w] : arm_probs) {
    if (w < 0.0) throw DataError("InterventionPolicy: negative probability");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("InterventionPolicy: probabilities must sum to 1");
  InterventionPolicy p;
  p.arm_probs_ = std::move(arm_probs);
  return p;
}

double InterventionPolicy::prob(int a, std::span<const double>) const {
  for (const auto& [arm, w] : arm_probs_) {
    if (arm == a) return w;
  }
  return 0.0;
}

}  // namespace retmle
