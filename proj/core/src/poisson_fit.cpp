#include "retmle/poisson_fit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <cstdio>
#include <cstdlib>

#include "dense_solve.hpp"

namespace retmle {

double HalFit::log_rate(double t, double history_v, std::span<const double> x) const {
  double eta = intercept;
  for (size_t i = 0; i < coef_index.size(); ++i) {
    eta += coef_value[i] * columns[static_cast<size_t>(coef_index[i])].value(t, history_v, x);
  }
  return eta;
}

double HalFit::rate(double t, double history_v, std::span<const double> x) const {
  return std::max(std::exp(log_rate(t, history_v, x)), rate_floor);
}

namespace {

constexpr double kCoefBound = 45.0;

struct AggData {
  // Cells aggregated by (pattern, fold). Stored per fold for fast train/val splits.
  int n_patterns = 0;
  int n_folds = 1;
  std::vector<std::vector<double>> fold_exposure;  // [fold][pattern]
  std::vector<std::vector<double>> fold_events;
  std::vector<double> total_exposure, total_events;

  // CSC over patterns.
  std::vector<int> col_offsets, col_pattern;
  std::vector<double> col_value;
  std::vector<char> col_binary;

  // Row-major pattern table (shared with the design), for Gram assembly.
  std::vector<int> row_offsets, row_cols;
  std::vector<double> row_values;
};

AggData aggregate(const PoissonDesign& design, int folds, std::uint64_t fold_seed) {
  AggData agg;
  agg.n_patterns = design.n_patterns();
  agg.n_folds = std::max(1, std::min(folds, design.n_subjects));

  std::vector<int> fold_of(static_cast<size_t>(design.n_subjects));
  {
    std::vector<int> order(static_cast<size_t>(design.n_subjects));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(fold_seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t i = 0; i < order.size(); ++i) {
      fold_of[static_cast<size_t>(order[i])] = static_cast<int>(i) % agg.n_folds;
    }
  }

  agg.fold_exposure.assign(static_cast<size_t>(agg.n_folds),
                           std::vector<double>(static_cast<size_t>(agg.n_patterns), 0.0));
  agg.fold_events.assign(static_cast<size_t>(agg.n_folds),
                         std::vector<double>(static_cast<size_t>(agg.n_patterns), 0.0));
  agg.total_exposure.assign(static_cast<size_t>(agg.n_patterns), 0.0);
  agg.total_events.assign(static_cast<size_t>(agg.n_patterns), 0.0);
  for (const auto& row : design.rows) {
    int f = fold_of[static_cast<size_t>(row.subject)];
    agg.fold_exposure[static_cast<size_t>(f)][static_cast<size_t>(row.pattern)] += row.exposure;
    agg.fold_events[static_cast<size_t>(f)][static_cast<size_t>(row.pattern)] += row.events;
    agg.total_exposure[static_cast<size_t>(row.pattern)] += row.exposure;
    agg.total_events[static_cast<size_t>(row.pattern)] += row.events;
  }

  // Transpose the pattern table into column-major form.
  const int n_cols = design.n_columns;
  std::vector<int> counts(static_cast<size_t>(n_cols), 0);
  for (int c : design.pattern_cols) ++counts[static_cast<size_t>(c)];
  agg.col_offsets.assign(static_cast<size_t>(n_cols) + 1, 0);
  for (int c = 0; c < n_cols; ++c) {
    agg.col_offsets[static_cast<size_t>(c) + 1] =
        agg.col_offsets[static_cast<size_t>(c)] + counts[static_cast<size_t>(c)];
  }
  agg.col_pattern.resize(design.pattern_cols.size());
  agg.col_value.resize(design.pattern_cols.size());
  std::vector<int> cursor(agg.col_offsets.begin(), agg.col_offsets.end() - 1);
  for (int p = 0; p < agg.n_patterns; ++p) {
    for (int e = design.pattern_offsets[static_cast<size_t>(p)];
         e < design.pattern_offsets[static_cast<size_t>(p) + 1]; ++e) {
      int c = design.pattern_cols[static_cast<size_t>(e)];
      int at = cursor[static_cast<size_t>(c)]++;
      agg.col_pattern[static_cast<size_t>(at)] = p;
      agg.col_value[static_cast<size_t>(at)] = design.pattern_values[static_cast<size_t>(e)];
    }
  }
  agg.col_binary.assign(static_cast<size_t>(n_cols), 1);
  for (int c = 0; c < n_cols; ++c) {
    for (int e = agg.col_offsets[static_cast<size_t>(c)];
         e < agg.col_offsets[static_cast<size_t>(c) + 1]; ++e) {
      if (agg.col_value[static_cast<size_t>(e)] != 1.0) {
        agg.col_binary[static_cast<size_t>(c)] = 0;
        break;
      }
    }
  }
  agg.row_offsets = design.pattern_offsets;
  agg.row_cols = design.pattern_cols;
  agg.row_values = design.pattern_values;
  return agg;
}

/// Cyclic penalized Newton coordinate descent on the aggregated problem.
/// Every accepted step is checked against the objective, so the penalized
/// loss is non-increasing sweep over sweep.
class CdSolver {
 public:
  CdSolver(const AggData& agg, std::vector<double> exposure, std::vector<double> events)
      : agg_(agg), exposure_(std::move(exposure)), events_(std::move(events)) {
    sum_events_ = std::accumulate(events_.begin(), events_.end(), 0.0);
    beta_.assign(agg_.col_offsets.size() - 1, 0.0);
    is_active_.assign(beta_.size(), 0);
    intercept_ = 0.0;
    eta_.assign(static_cast<size_t>(agg_.n_patterns), 0.0);
    weight_.assign(static_cast<size_t>(agg_.n_patterns), 0.0);
    update_intercept_closed_form();
  }

  double objective(double penalty) const {
    double obj = 0.0;
    for (size_t p = 0; p < eta_.size(); ++p) obj += weight_[p] - events_[p] * eta_[p];
    double l1 = 0.0;
    for (double b : beta_) l1 += std::abs(b);
    return obj + penalty * l1;
  }

  /// max_j |score_j| at the current (null) coefficients.
  double max_abs_score() const {
    double worst = 0.0;
    for (size_t c = 0; c < beta_.size(); ++c) {
      auto [g, h] = score_col(static_cast<int>(c));
      (void)h;
      worst = std::max(worst, std::abs(g));
    }
    return worst;
  }

  struct SolveStats {
    int sweeps = 0;
    bool converged = true;
    double kkt_residual = 0.0;
    int polish_ok = 0, polish_fail = 0;
  };

  SolveStats solve(double penalty, const PoissonFitOptions& opt, bool trace,
                   double coef_tol, double kkt_tol) {
    SolveStats stats;
    int sweeps_left = opt.max_sweeps;
    std::vector<double> prev_beta;
    int sweeps_since_polish = 0;
    bool polish_enabled = true;
    double previous_worst = std::numeric_limits<double>::infinity();
    double inner_tol = coef_tol;
    for (int round = 0; round < 200; ++round) {
      polish_enabled = true;
      // Inner sweeps over the active set, with second-order polish once
      // first-order progress slows down. A failed polish stays off until the
      // active set changes. Bounded per round so the scan and polish refresh
      // even while coordinates keep ping-ponging.
      int round_sweeps = 0;
      while (sweeps_left > 0 && round_sweeps < 300) {
        --sweeps_left;
        ++stats.sweeps;
        ++round_sweeps;
        ++sweeps_since_polish;
        prev_beta = beta_;
        const double prev_intercept = intercept_;
        double max_change = sweep(penalty);
        bool stalled = max_change < inner_tol;
        if (polish_enabled && ((max_change < 0.5 && sweeps_since_polish >= 2) || stalled)) {
          const double polish_step = newton_polish(penalty);
          if (polish_step > 0.0) ++stats.polish_ok; else ++stats.polish_fail;
          if (polish_step > inner_tol) {
            stalled = false;
          } else {
            // polish converged on the current working set (or had nothing to
            // do); hand control to the subgradient scan
            stalled = true;
            if (polish_step == 0.0) polish_enabled = false;
          }
          sweeps_since_polish = 0;
        } else if (max_change > 0.0 && max_change < 1e-3 && stats.sweeps % 8 == 0) {
          extrapolate(penalty, prev_beta, prev_intercept, max_change);
        }
        if (trace && opt.objective_trace) opt.objective_trace->push_back(objective(penalty));
        if (stalled) break;
      }
      // Full subgradient scan; activate violators.
      double worst = 0.0;
      bool added = false;
      for (size_t c = 0; c < beta_.size(); ++c) {
        auto [g, h] = score_col(static_cast<int>(c));
        (void)h;
        double resid;
        if (beta_[c] != 0.0) {
          resid = std::abs(g + penalty * (beta_[c] > 0 ? 1.0 : -1.0));
        } else {
          resid = std::max(0.0, std::abs(g) - penalty);
        }
        if (std::abs(beta_[c]) > kCoefBound - 0.5) resid = 0.0;  // pinned at bound
        worst = std::max(worst, resid);
        if (resid > 0.5 * kkt_tol && !is_active_[c]) {
          is_active_[c] = 1;
          active_.push_back(static_cast<int>(c));
          added = true;
        }
      }
      {
        auto [g0, h0] = intercept_score();
        (void)h0;
        if (std::abs(intercept_) < kCoefBound - 0.5) worst = std::max(worst, std::abs(g0));
      }
      stats.kkt_residual = worst;
      if (std::getenv("RETMLE_SOLVER_DEBUG")) {
        std::fprintf(stderr, "round=%d sweeps=%d worst=%.3e added=%d active=%zu obj=%.6f\n",
                     round, stats.sweeps, worst, (int)added, active_.size(), objective(penalty));
      }
      if (worst <= kkt_tol) return stats;
      if (!added) {
        // All violators are active already; tighten the inner tolerance so
        // the remaining subgradient residual keeps shrinking.
        if (inner_tol <= 1e-12 && worst > 0.8 * previous_worst) break;
        inner_tol = std::max(inner_tol * 0.01, 1e-13);
      }
      previous_worst = worst;
      if (sweeps_left <= 0) break;
    }
    stats.converged = false;
    return stats;
  }

  int debug_last_sweeps = 0;

  double validation_loss(std::span<const double> val_exposure,
                         std::span<const double> val_events) const {
    double loss = 0.0;
    for (size_t p = 0; p < eta_.size(); ++p) {
      if (val_exposure[p] == 0.0 && val_events[p] == 0.0) continue;
      loss += val_exposure[p] * std::exp(eta_[p]) - val_events[p] * eta_[p];
    }
    return loss;
  }

  double intercept() const { return intercept_; }
  const std::vector<double>& beta() const { return beta_; }

 private:
  std::pair<double, double> score_col(int c) const {
    double g = 0.0, h = 0.0;
    for (int e = agg_.col_offsets[static_cast<size_t>(c)];
         e < agg_.col_offsets[static_cast<size_t>(c) + 1]; ++e) {
      int p = agg_.col_pattern[static_cast<size_t>(e)];
      double x = agg_.col_value[static_cast<size_t>(e)];
      g += x * (weight_[static_cast<size_t>(p)] - events_[static_cast<size_t>(p)]);
      h += x * x * weight_[static_cast<size_t>(p)];
    }
    return {g, h};
  }

  std::pair<double, double> intercept_score() const {
    double g = 0.0, h = 0.0;
    for (size_t p = 0; p < eta_.size(); ++p) {
      g += weight_[p] - events_[p];
      h += weight_[p];
    }
    return {g, h};
  }

  void update_intercept_closed_form() {
    // Given the other coordinates, the optimal intercept shift matches the
    // total expected and observed events: delta = log(sum y / sum w).
    double sum_w = 0.0;
    for (size_t p = 0; p < eta_.size(); ++p) {
      weight_[p] = exposure_[p] * std::exp(eta_[p]);
      sum_w += weight_[p];
    }
    double target = sum_events_ > 0.0 ? std::log(sum_events_ / sum_w) : -2.0 * kCoefBound;
    double delta = std::clamp(target, -kCoefBound - intercept_, kCoefBound - intercept_);
    if (delta == 0.0) return;
    intercept_ += delta;
    double mult = std::exp(delta);
    for (size_t p = 0; p < eta_.size(); ++p) {
      eta_[p] += delta;
      weight_[p] *= mult;
    }
  }

  // Returns |delta| of the accepted step.
  double update_coordinate(int c, double penalty) {
    auto [g, h] = score_col(c);
    if (h <= 1e-300) {
      // Column carries no weight; only the penalty acts on it.
      if (penalty > 0.0 && beta_[static_cast<size_t>(c)] != 0.0) {
        double delta = -beta_[static_cast<size_t>(c)];
        commit(c, delta, true);
        return std::abs(delta);
      }
      return 0.0;
    }
    double b = beta_[static_cast<size_t>(c)];
    const bool binary = agg_.col_binary[static_cast<size_t>(c)] != 0;
    double delta;
    if (binary) {
      // Exact coordinate minimizer of (e^d - 1) S_w - d S_y + penalty |b + d|:
      // piecewise in the sign of b + d, each piece solved in closed form.
      const double col_weight = h;      // sum of w over the column (x = 1)
      const double col_events = h - g;  // g = sum w - sum y on binary columns
      double target;
      if (col_events - penalty > 0.0 &&
          b + std::log((col_events - penalty) / col_weight) > 0.0) {
        target = b + std::log((col_events - penalty) / col_weight);
      } else if (col_events + penalty > 0.0 &&
                 b + std::log((col_events + penalty) / col_weight) < 0.0) {
        target = b + std::log((col_events + penalty) / col_weight);
      } else if (penalty > 0.0) {
        target = 0.0;
      } else {
        // zero events in an active cell: the minimizer sits at -infinity
        target = -kCoefBound;
      }
      delta = std::clamp(target, -kCoefBound, kCoefBound) - b;
      if (delta == 0.0) return 0.0;
    } else {
      double z = h * b - g;
      double proposal;
      if (penalty > 0.0) {
        if (z > penalty) {
          proposal = (z - penalty) / h;
        } else if (z < -penalty) {
          proposal = (z + penalty) / h;
        } else {
          proposal = 0.0;
        }
      } else {
        proposal = z / h;
      }
      proposal = std::clamp(proposal, -kCoefBound, kCoefBound);
      delta = std::clamp(proposal - b, -2.0, 2.0);
      if (delta == 0.0) return 0.0;
      // Newton steps can overshoot; backtrack until the objective descends.
      for (int halving = 0; halving < 60; ++halving) {
        double dloss = 0.0;
        for (int e = agg_.col_offsets[static_cast<size_t>(c)];
             e < agg_.col_offsets[static_cast<size_t>(c) + 1]; ++e) {
          int p = agg_.col_pattern[static_cast<size_t>(e)];
          double x = agg_.col_value[static_cast<size_t>(e)];
          dloss += weight_[static_cast<size_t>(p)] * (std::exp(x * delta) - 1.0) -
                   events_[static_cast<size_t>(p)] * x * delta;
        }
        dloss += penalty * (std::abs(b + delta) - std::abs(b));
        if (dloss <= 1e-12) break;
        delta *= 0.5;
        if (std::abs(delta) < 1e-16) return 0.0;
      }
    }

    commit(c, delta, binary);
    return std::abs(delta);
  }

  void commit(int c, double delta, bool binary) {
    double b = beta_[static_cast<size_t>(c)];
    beta_[static_cast<size_t>(c)] = b + delta;
    if (binary) {
      double mult = std::exp(delta);
      for (int e = agg_.col_offsets[static_cast<size_t>(c)];
           e < agg_.col_offsets[static_cast<size_t>(c) + 1]; ++e) {
        int p = agg_.col_pattern[static_cast<size_t>(e)];
        eta_[static_cast<size_t>(p)] += delta;
        weight_[static_cast<size_t>(p)] *= mult;
      }
    } else {
      for (int e = agg_.col_offsets[static_cast<size_t>(c)];
           e < agg_.col_offsets[static_cast<size_t>(c) + 1]; ++e) {
        int p = agg_.col_pattern[static_cast<size_t>(e)];
        double x = agg_.col_value[static_cast<size_t>(e)];
        eta_[static_cast<size_t>(p)] += x * delta;
        weight_[static_cast<size_t>(p)] =
            exposure_[static_cast<size_t>(p)] * std::exp(eta_[static_cast<size_t>(p)]);
      }
    }
  }

  double sweep(double penalty) {
    double max_change = 0.0;
    update_intercept_closed_form();
    for (int c : active_) {
      max_change = std::max(max_change, update_coordinate(c, penalty));
    }
    return max_change;
  }

  // Cyclic descent crawls along flat diagonal valleys (e.g. quasi-separated
  // cells driving eta to the boundary). When a sweep stalls, try a long step
  // along the last sweep direction, kept only if the objective drops.
  bool extrapolate(double penalty, const std::vector<double>& prev_beta,
                   double prev_intercept, double sweep_change) {
    if (sweep_change <= 0.0 || sweep_change > 0.05) return false;
    const double base_obj = objective(penalty);
    double c = std::min(1e12, 4.0 / sweep_change);
    for (int tries = 0; tries < 6 && c >= 1.0; ++tries, c /= 16.0) {
      std::vector<double> cand(beta_.size());
      for (size_t i = 0; i < beta_.size(); ++i) {
        cand[i] = std::clamp(beta_[i] + c * (beta_[i] - prev_beta[i]), -kCoefBound, kCoefBound);
      }
      double cand_intercept = std::clamp(intercept_ + c * (intercept_ - prev_intercept),
                                         -kCoefBound, kCoefBound);
      double obj = objective_at(penalty, cand, cand_intercept);
      if (obj < base_obj - 1e-12) {
        beta_ = std::move(cand);
        intercept_ = cand_intercept;
        refresh_eta();
        return true;
      }
    }
    return false;
  }

  // Proximal-Newton refinement on the current working set: intercept plus
  // nonzero actives plus violated zeros, with penalty signs fixed at entry.
  // Coordinates that project to zero leave the working set for the rest of
  // the call, so the set shrinks monotonically and cannot churn. Returns the
  // total accepted movement (max-norm), 0 when no step was taken.
  double newton_polish(double penalty) {
    std::vector<int> coords;
    std::vector<double> signs;
    for (int c : active_) {
      const double b = beta_[static_cast<size_t>(c)];
      if (std::abs(b) >= kCoefBound - 0.5) continue;
      if (b != 0.0) {
        coords.push_back(c);
        signs.push_back(b > 0 ? 1.0 : -1.0);
      } else {
        // A zero coordinate whose subgradient is violated enters in the
        // orthant the violation points into; KKT-happy zeros stay out.
        auto [gc, hc] = score_col(c);
        (void)hc;
        if (std::abs(gc) > penalty + 1e-12) {
          coords.push_back(c);
          signs.push_back(gc > 0 ? -1.0 : 1.0);
        }
      }
    }
    if (coords.size() > 500) return 0.0;

    double total_moved = 0.0;
    std::vector<int> slot(beta_.size(), -1);
    std::vector<double> H, g, step, cand;
    std::vector<int> present;
    std::vector<double> present_x;
    for (int iter = 0; iter < 12; ++iter) {
      const int p = static_cast<int>(coords.size()) + 1;  // intercept first
      std::fill(slot.begin(), slot.end(), -1);
      for (size_t i = 0; i < coords.size(); ++i) {
        slot[static_cast<size_t>(coords[i])] = static_cast<int>(i) + 1;
      }
      H.assign(static_cast<size_t>(p) * p, 0.0);
      g.assign(static_cast<size_t>(p), 0.0);
      for (size_t pat = 0; pat < eta_.size(); ++pat) {
        const double w = weight_[pat];
        const double resid = w - events_[pat];
        if (w == 0.0 && resid == 0.0) continue;
        present.clear();
        present_x.clear();
        present.push_back(0);
        present_x.push_back(1.0);
        for (int e = agg_.row_offsets[pat]; e < agg_.row_offsets[pat + 1]; ++e) {
          const int s = slot[static_cast<size_t>(agg_.row_cols[static_cast<size_t>(e)])];
          if (s >= 0) {
            present.push_back(s);
            present_x.push_back(agg_.row_values[static_cast<size_t>(e)]);
          }
        }
        for (size_t i = 0; i < present.size(); ++i) {
          g[static_cast<size_t>(present[i])] += present_x[i] * resid;
          for (size_t l = 0; l <= i; ++l) {
            H[static_cast<size_t>(present[i] * p + present[l])] +=
                present_x[i] * present_x[l] * w;
          }
        }
      }
      double max_diag = 0.0;
      for (int r = 0; r < p; ++r) {
        max_diag = std::max(max_diag, H[static_cast<size_t>(r * p + r)]);
      }
      for (int r = 0; r < p; ++r) {
        for (int c = r + 1; c < p; ++c) {
          H[static_cast<size_t>(r * p + c)] = H[static_cast<size_t>(c * p + r)];
        }
        H[static_cast<size_t>(r * p + r)] += 1e-9 * (1.0 + max_diag);
      }
      for (size_t i = 0; i < coords.size(); ++i) {
        g[i + 1] += penalty * signs[i];
      }
      step = g;
      if (!detail::dense_solve(H, step, p)) break;
      double step_norm = 0.0;
      for (double& s : step) {
        s = -s;
        step_norm = std::max(step_norm, std::abs(s));
      }
      if (step_norm <= 1e-13) break;

      auto apply = [&](double t, std::vector<double>& out, double& out_intercept,
                       bool& hit_zero) {
        out = beta_;
        out_intercept = std::clamp(intercept_ + t * step[0], -kCoefBound, kCoefBound);
        hit_zero = false;
        for (size_t i = 0; i < coords.size(); ++i) {
          const double before = out[static_cast<size_t>(coords[i])];
          double after = std::clamp(before + t * step[i + 1], -kCoefBound, kCoefBound);
          if (penalty > 0.0 && after * signs[i] < 0.0) {
            after = 0.0;  // orthant projection
            hit_zero = true;
          }
          out[static_cast<size_t>(coords[i])] = after;
        }
      };

      double moved = 0.0;
      bool hit_zero = false;
      double cand_intercept = 0.0;
      if (step_norm <= 1e-4) {
        // Attainable decrease is below objective rounding noise; the damped
        // Newton step is safe without a line search.
        apply(1.0, cand, cand_intercept, hit_zero);
        beta_ = cand;
        intercept_ = cand_intercept;
        refresh_eta();
        moved = step_norm;
      } else {
        const double base_obj = objective(penalty);
        double t = std::min(1.0, 30.0 / step_norm);
        for (int halving = 0; halving < 10; ++halving) {
          apply(t, cand, cand_intercept, hit_zero);
          if (objective_at(penalty, cand, cand_intercept) < base_obj - 1e-12) {
            beta_ = cand;
            intercept_ = cand_intercept;
            refresh_eta();
            moved = t * step_norm;
            break;
          }
          t *= 0.5;
        }
        if (moved == 0.0) break;
      }
      total_moved = std::max(total_moved, moved);

      // Coordinates projected to zero leave the working set for this call.
      if (hit_zero) {
        std::vector<int> kept;
        std::vector<double> kept_signs;
        for (size_t i = 0; i < coords.size(); ++i) {
          if (beta_[static_cast<size_t>(coords[i])] != 0.0) {
            kept.push_back(coords[i]);
            kept_signs.push_back(signs[i]);
          }
        }
        coords = std::move(kept);
        signs = std::move(kept_signs);
      }
      if (moved <= 1e-10) break;
    }
    return total_moved;
  }

  double objective_at(double penalty, const std::vector<double>& beta,
                      double intercept) const {
    std::vector<double> eta(eta_.size(), intercept);
    for (size_t c = 0; c < beta.size(); ++c) {
      if (beta[c] == 0.0) continue;
      for (int e = agg_.col_offsets[c]; e < agg_.col_offsets[c + 1]; ++e) {
        eta[static_cast<size_t>(agg_.col_pattern[static_cast<size_t>(e)])] +=
            beta[c] * agg_.col_value[static_cast<size_t>(e)];
      }
    }
    double obj = 0.0;
    for (size_t p = 0; p < eta.size(); ++p) {
      obj += exposure_[p] * std::exp(eta[p]) - events_[p] * eta[p];
    }
    for (double b : beta) obj += penalty * std::abs(b);
    return obj;
  }

  void refresh_eta() {
    std::fill(eta_.begin(), eta_.end(), intercept_);
    for (size_t c = 0; c < beta_.size(); ++c) {
      if (beta_[c] == 0.0) continue;
      for (int e = agg_.col_offsets[c]; e < agg_.col_offsets[c + 1]; ++e) {
        eta_[static_cast<size_t>(agg_.col_pattern[static_cast<size_t>(e)])] +=
            beta_[c] * agg_.col_value[static_cast<size_t>(e)];
      }
    }
    for (size_t p = 0; p < eta_.size(); ++p) {
      weight_[p] = exposure_[p] * std::exp(eta_[p]);
    }
  }

  const AggData& agg_;
  std::vector<double> exposure_, events_;
  double sum_events_ = 0.0;
  double intercept_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> eta_, weight_;
  std::vector<int> active_;
  std::vector<char> is_active_;
};

std::vector<double> penalty_path(double lambda_max, int n_values, double min_ratio) {
  if (lambda_max <= 0.0) return {0.0};
  std::vector<double> path;
  path.reserve(static_cast<size_t>(n_values));
  for (int i = 0; i < n_values; ++i) {
    double frac = n_values == 1 ? 0.0 : static_cast<double>(i) / (n_values - 1);
    path.push_back(lambda_max * std::pow(min_ratio, frac));
  }
  return path;
}

}  // namespace

HalFit fit_penalized_poisson(const PoissonDesign& design, std::vector<BasisColumn> columns,
                             const PoissonFitOptions& options) {
  if (design.rows.empty()) throw DataError("fit_penalized_poisson: empty design");
  if (static_cast<int>(columns.size()) != design.n_columns) {
    throw DataError("fit_penalized_poisson: column count does not match design");
  }

  HalFit fit;
  fit.columns = std::move(columns);

  if (design.total_events() == 0.0) {
    fit.intercept = std::log(HalFit::rate_floor);
    fit.penalty = options.fixed_penalty.value_or(0.0);
    return fit;
  }

  AggData agg = aggregate(design, options.cv_folds, options.fold_seed);

  double chosen_penalty;
  if (options.fixed_penalty) {
    chosen_penalty = *options.fixed_penalty;
  } else {
    CdSolver null_solver(agg, agg.total_exposure, agg.total_events);
    double lambda_max = null_solver.max_abs_score();
    auto path = penalty_path(lambda_max, options.n_penalties, options.penalty_min_ratio);

    // Intermediate path points only need enough precision to rank penalties
    // and to warm-start; the selected penalty is re-solved tightly.
    auto loose_coef = [&](double) { return std::max(1e-4, options.coef_tol); };
    auto loose_kkt = [&](double lambda) {
      return std::max(options.kkt_tol, 1e-2 * (1.0 + lambda));
    };

    std::vector<double> cv_loss(path.size(), 0.0);
    double null_loss = 0.0;
    for (int f = 0; f < agg.n_folds; ++f) {
      std::vector<double> train_expo(agg.total_exposure);
      std::vector<double> train_events(agg.total_events);
      for (size_t p = 0; p < train_expo.size(); ++p) {
        train_expo[p] -= agg.fold_exposure[static_cast<size_t>(f)][p];
        train_events[p] -= agg.fold_events[static_cast<size_t>(f)][p];
      }
      CdSolver solver(agg, std::move(train_expo), std::move(train_events));
      null_loss += solver.validation_loss(agg.fold_exposure[static_cast<size_t>(f)],
                                          agg.fold_events[static_cast<size_t>(f)]);
      int fold_sweeps = 0, fold_pok = 0, fold_pfail = 0;
      for (size_t li = 0; li < path.size(); ++li) {
        auto st = solver.solve(path[li], options, false, loose_coef(path[li]), loose_kkt(path[li]));
        fold_sweeps += st.sweeps;
        fold_pok += st.polish_ok;
        fold_pfail += st.polish_fail;
        if (std::getenv("RETMLE_SOLVER_DEBUG2")) {
          std::fprintf(stderr, "  lambda %.4f sweeps %d kkt %.2e pok %d pfail %d\n",
                       path[li], st.sweeps, st.kkt_residual, st.polish_ok, st.polish_fail);
        }
        cv_loss[li] += solver.validation_loss(agg.fold_exposure[static_cast<size_t>(f)],
                                              agg.fold_events[static_cast<size_t>(f)]);
      }
      if (std::getenv("RETMLE_SOLVER_DEBUG")) {
        std::fprintf(stderr, "fold %d sweeps %d polish ok %d fail %d\n", f, fold_sweeps,
                     fold_pok, fold_pfail);
      }
    }
    size_t best = 0;
    for (size_t li = 1; li < path.size(); ++li) {
      if (cv_loss[li] < cv_loss[best]) best = li;
    }
    chosen_penalty = path[best];
    fit.cv_loss = cv_loss[best];
    fit.null_cv_loss = null_loss;

    CdSolver final_solver(agg, agg.total_exposure, agg.total_events);
    CdSolver::SolveStats stats;
    for (size_t li = 0; li <= best; ++li) {
      bool last = li == best;
      stats = final_solver.solve(path[li], options, last,
                                 last ? options.coef_tol : loose_coef(path[li]),
                                 last ? options.kkt_tol : loose_kkt(path[li]));
      fit.sweeps += stats.sweeps;
    }
    fit.converged = stats.converged;
    fit.kkt_residual = stats.kkt_residual;
    fit.intercept = final_solver.intercept();
    for (size_t c = 0; c < final_solver.beta().size(); ++c) {
      if (final_solver.beta()[c] != 0.0) {
        fit.coef_index.push_back(static_cast<int>(c));
        fit.coef_value.push_back(final_solver.beta()[c]);
        fit.l1_norm += std::abs(final_solver.beta()[c]);
      }
    }
    fit.penalty = chosen_penalty;
    return fit;
  }

  CdSolver solver(agg, agg.total_exposure, agg.total_events);
  auto stats = solver.solve(chosen_penalty, options, true, options.coef_tol, options.kkt_tol);
  fit.sweeps = stats.sweeps;
  fit.converged = stats.converged;
  fit.kkt_residual = stats.kkt_residual;
  fit.intercept = solver.intercept();
  for (size_t c = 0; c < solver.beta().size(); ++c) {
    if (solver.beta()[c] != 0.0) {
      fit.coef_index.push_back(static_cast<int>(c));
      fit.coef_value.push_back(solver.beta()[c]);
      fit.l1_norm += std::abs(solver.beta()[c]);
    }
  }
  fit.penalty = chosen_penalty;
  return fit;
}

double poisson_loss(const PoissonDesign& design, const HalFit& fit) {
  std::vector<double> eta(static_cast<size_t>(design.n_patterns()), fit.intercept);
  std::vector<double> beta_dense(static_cast<size_t>(design.n_columns), 0.0);
  for (size_t i = 0; i < fit.coef_index.size(); ++i) {
    beta_dense[static_cast<size_t>(fit.coef_index[i])] = fit.coef_value[i];
  }
  for (int p = 0; p < design.n_patterns(); ++p) {
    for (int e = design.pattern_offsets[static_cast<size_t>(p)];
         e < design.pattern_offsets[static_cast<size_t>(p) + 1]; ++e) {
      eta[static_cast<size_t>(p)] +=
          beta_dense[static_cast<size_t>(design.pattern_cols[static_cast<size_t>(e)])] *
          design.pattern_values[static_cast<size_t>(e)];
    }
  }
  double loss = 0.0;
  for (const auto& row : design.rows) {
    loss += row.exposure * std::exp(eta[static_cast<size_t>(row.pattern)]) -
            row.events * eta[static_cast<size_t>(row.pattern)];
  }
  return loss;
}

std::vector<double> poisson_score(const PoissonDesign& design, const HalFit& fit) {
  std::vector<double> eta(static_cast<size_t>(design.n_patterns()), fit.intercept);
  std::vector<double> beta_dense(static_cast<size_t>(design.n_columns), 0.0);
  for (size_t i = 0; i < fit.coef_index.size(); ++i) {
    beta_dense[static_cast<size_t>(fit.coef_index[i])] = fit.coef_value[i];
  }
  for (int p = 0; p < design.n_patterns(); ++p) {
    for (int e = design.pattern_offsets[static_cast<size_t>(p)];
         e < design.pattern_offsets[static_cast<size_t>(p) + 1]; ++e) {
      eta[static_cast<size_t>(p)] +=
          beta_dense[static_cast<size_t>(design.pattern_cols[static_cast<size_t>(e)])] *
          design.pattern_values[static_cast<size_t>(e)];
    }
  }
  std::vector<double> residual(static_cast<size_t>(design.n_patterns()), 0.0);
  for (const auto& row : design.rows) {
    residual[static_cast<size_t>(row.pattern)] +=
        row.exposure * std::exp(eta[static_cast<size_t>(row.pattern)]) - row.events;
  }
  std::vector<double> score(static_cast<size_t>(design.n_columns), 0.0);
  for (int p = 0; p < design.n_patterns(); ++p) {
    for (int e = design.pattern_offsets[static_cast<size_t>(p)];
         e < design.pattern_offsets[static_cast<size_t>(p) + 1]; ++e) {
      score[static_cast<size_t>(design.pattern_cols[static_cast<size_t>(e)])] +=
          design.pattern_values[static_cast<size_t>(e)] * residual[static_cast<size_t>(p)];
    }
  }
  return score;
}

}  // namespace retmle
