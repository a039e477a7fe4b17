#pragma once

// Small discrete instances for exercising the TMLE engine: intensity tables
// indexed by (grid time, state, arm, subject), with the subject index carried
// in covariates[0]. Paths are sampled from the same law the tables describe:
// at each at-risk time, death first, then (given survival) a recurrent event,
// then (given neither) censoring.

#include <random>

#include "retmle/tmle.hpp"

namespace retmle::testing {

class TableIntensity : public IntensityModel {
 public:
  TableIntensity(int K, int J, int n_subjects)
      : K_(K), J_(J), n_(n_subjects), values_(static_cast<size_t>(K * J * 2 * n_subjects), 0.0) {}

  double& at(int k, int j, int a, int subject) {
    return values_[index(k, j, a, subject)];
  }
  double at(int k, int j, int a, int subject) const { return values_[index(k, j, a, subject)]; }

  void increments(const PooledGrid& grid, int state_j, int a,
                  std::span<const double> covariates, std::span<double> out) const override {
    const int subject = static_cast<int>(covariates[0]);
    for (int k = 0; k < grid.size(); ++k) {
      out[static_cast<size_t>(k)] = at(k, std::min(state_j, J_), a, subject);
    }
  }

 private:
  size_t index(int k, int j, int a, int subject) const {
    return static_cast<size_t>(((k * J_ + (j - 1)) * 2 + a) * n_ + subject);
  }
  int K_, J_, n_;
  std::vector<double> values_;
};

class TableTreatment : public TreatmentModel {
 public:
  explicit TableTreatment(std::vector<double> p_treat) : p1_(std::move(p_treat)) {}
  double prob(int a, std::span<const double> covariates) const override {
    const double p = p1_[static_cast<size_t>(covariates[0])];
    return a == 1 ? p : 1.0 - p;
  }

 private:
  std::vector<double> p1_;
};

struct DiscreteInstance {
  PooledGrid grid;
  int J = 1;
  int n = 0;
  std::vector<SubjectPath> paths;
  std::shared_ptr<TableIntensity> death, event, censor;
  std::shared_ptr<TableTreatment> treatment;

  NuisanceSet nuisances(const InterventionPolicy& pi_star) const {
    NuisanceSet nuis;
    nuis.death = death;
    nuis.event = event;
    nuis.censor = censor;
    nuis.treatment = treatment;
    nuis.intervention = pi_star;
    return nuis;
  }
};

inline DiscreteInstance random_instance(std::mt19937_64& rng, int K, int J, int n,
                                        double max_inc = 0.35, double max_censor = 0.2) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DiscreteInstance inst;
  inst.J = J;
  inst.n = n;
  inst.grid.horizon = 1.0;
  double t = 0.0;
  for (int k = 0; k < K; ++k) {
    t += 0.05 + 0.9 * unif(rng) * (1.0 - t) / (K - k);
    inst.grid.times.push_back(t);
  }
  inst.death = std::make_shared<TableIntensity>(K, J, n);
  inst.event = std::make_shared<TableIntensity>(K, J, n);
  inst.censor = std::make_shared<TableIntensity>(K, J, n);
  std::vector<double> p1(static_cast<size_t>(n));
  for (auto& p : p1) p = 0.2 + 0.6 * unif(rng);
  inst.treatment = std::make_shared<TableTreatment>(p1);

  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < K; ++k) {
        for (int j = 1; j <= J; ++j) {
          inst.death->at(k, j, a, i) = 0.05 + max_inc * unif(rng);
          inst.event->at(k, j, a, i) = 0.05 + max_inc * unif(rng);
          inst.censor->at(k, j, a, i) = 0.05 + max_censor * unif(rng);
        }
      }
    }
  }

  HistoryState history{J};
  for (int i = 0; i < n; ++i) {
    SubjectPath p;
    p.id = "inst" + std::to_string(i);
    p.covariates = {static_cast<double>(i)};
    p.treatment = unif(rng) < p1[static_cast<size_t>(i)] ? 1 : 0;
    p.admin_end = inst.grid.horizon;
    int count = 0;
    for (int k = 0; k < K; ++k) {
      const double tk = inst.grid.times[static_cast<size_t>(k)];
      const int j = history.state_of_count(count);
      if (unif(rng) < inst.death->at(k, j, p.treatment, i)) {
        p.records.push_back({tk, EventKind::Death});
        break;
      }
      if (unif(rng) < inst.event->at(k, j, p.treatment, i)) {
        p.records.push_back({tk, EventKind::Recurrent});
        ++count;
        continue;  // censoring competes only when nothing else happened
      }
      if (unif(rng) < inst.censor->at(k, j, p.treatment, i)) {
        p.records.push_back({tk, EventKind::Censor});
        break;
      }
    }
    inst.paths.push_back(std::move(p));
  }
  return inst;
}

}  // namespace retmle::testing
