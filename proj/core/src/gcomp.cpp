#include "retmle/gcomp.hpp"

#include <algorithm>

namespace retmle {

IncrementMatrix make_increment_matrix(const IntensityModel& death_model,
                                      const IntensityModel& event_model,
                                      const PooledGrid& grid, int count_cap, int treatment,
                                      std::span<const double> covariates) {
  IncrementMatrix inc;
  inc.K = grid.size();
  inc.J = count_cap;
  inc.death.resize(static_cast<size_t>(inc.K) * inc.J);
  inc.event.resize(static_cast<size_t>(inc.K) * inc.J);
  std::vector<double> buffer(static_cast<size_t>(inc.K));
  for (int j = 1; j <= inc.J; ++j) {
    death_model.increments(grid, j, treatment, covariates, buffer);
    for (int k = 0; k < inc.K; ++k) inc.d_ref(k, j) = buffer[static_cast<size_t>(k)];
    event_model.increments(grid, j, treatment, covariates, buffer);
    for (int k = 0; k < inc.K; ++k) inc.y_ref(k, j) = buffer[static_cast<size_t>(k)];
  }
  return inc;
}

void transition_row(int j, int J, double d, double y, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (j == J + 1) {
    out[static_cast<size_t>(J)] = 1.0;  // augmented constant coordinate
    return;
  }
  if (j < J) {
    out[static_cast<size_t>(j - 1)] = (1.0 - d) * (1.0 - y);
    out[static_cast<size_t>(j)] = (1.0 - d) * y;
    out[static_cast<size_t>(J)] = (1.0 - d) * y;
  } else {
    out[static_cast<size_t>(J - 1)] = 1.0 - d;
    out[static_cast<size_t>(J)] = (1.0 - d) * y;
  }
}

GcompTable backward_recursion(const IncrementMatrix& inc) {
  GcompTable table;
  table.K = inc.K;
  table.J = inc.J;
  table.values.assign(static_cast<size_t>(inc.K + 1) * inc.J, 0.0);
  const int J = inc.J;
  for (int k = inc.K - 1; k >= 0; --k) {
    for (int j = 1; j <= J; ++j) {
      const double d = inc.d(k, j);
      const double y = inc.y(k, j);
      const int jn = std::min(j + 1, J);
      const double z_stay = table.values[static_cast<size_t>((k + 1) * J + j - 1)];
      const double z_move = table.values[static_cast<size_t>((k + 1) * J + jn - 1)];
      table.values[static_cast<size_t>(k * J + j - 1)] =
          (1.0 - d) * ((1.0 - y) * z_stay + y * (1.0 + z_move));
    }
  }
  return table;
}

CleverPair clever_covariates(const GcompTable& table, const IncrementMatrix& inc, int k,
                             int state_j) {
  const int J = table.J;
  const int jn = std::min(state_j + 1, J);
  const double z_stay = table.z(k + 1, state_j);
  const double z_move = table.z(k + 1, jn);
  const double y = inc.y(k, state_j);
  CleverPair out;
  out.h_event = z_move + 1.0 - z_stay;
  out.h_death = -((1.0 - y) * z_stay + y * (1.0 + z_move));
  return out;
}

double GcompSummary::value(size_t subject, int arm) const {
  for (size_t a = 0; a < arms.size(); ++a) {
    if (arms[a] == arm) return z11[subject * arms.size() + a];
  }
  throw DataError("GcompSummary: missing table for requested treatment arm");
}

PluginResult plugin_psi(std::span<const SubjectPath> paths, const InterventionPolicy& pi_star,
                        const GcompSummary& summary) {
  PluginResult out;
  out.subject_means.reserve(paths.size());
  for (size_t i = 0; i < paths.size(); ++i) {
    double mean_i = 0.0;
    for (const auto& [arm, w] : pi_star.support()) {
      if (w <= 0.0) continue;
      double pw = pi_star.prob(arm, paths[i].covariates);
      if (pw > 0.0) mean_i += pw * summary.value(i, arm);
    }
    out.subject_means.push_back(mean_i);
    out.psi += mean_i;
  }
  out.psi /= static_cast<double>(paths.size());
  return out;
}

}  // namespace retmle
