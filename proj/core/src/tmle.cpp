#include "retmle/tmle.hpp"

#include <algorithm>
#include <cmath>

#include "retmle/threading.hpp"

namespace retmle {

double EicEvaluation::pn_eic() const {
  double s = 0.0;
  for (double v : phi) s += v;
  return phi.empty() ? 0.0 : s / static_cast<double>(phi.size());
}

double EicEvaluation::variance() const {
  double s = 0.0;
  for (double v : phi) s += v * v;
  return phi.empty() ? 0.0 : s / static_cast<double>(phi.size());
}

namespace {

constexpr double kZ975 = 1.959964;

struct ProcessScale {
  double scale = 1.0;
  double cap = 1.0 - IntensityModel::increment_margin;

  void apply(double eps) {
    scale *= std::exp(eps);
    cap = std::min(std::exp(eps) * cap, 1.0 - IntensityModel::increment_margin);
  }
  double operator()(double v) const { return std::min(scale * v, cap); }
};

struct SubjectFrame {
  int at_risk_count = 0;  // grid indices 0..at_risk_count-1 are at risk
  std::vector<int> state;
  std::vector<std::int8_t> dNy, dNd;
  int death_k = -1;
  double pi_star_obs = 0.0;
  std::vector<double> raw_weight;  // before truncation; empty when pi_star_obs == 0
  double min_censor_survival = 1.0;
  int truncated = 0;
  double max_raw_weight = 0.0;
};

struct PassResult {
  double psi = 0.0;
  std::vector<double> phi;
  double num_death = 0.0, den_death = 0.0;
  double num_event = 0.0, den_event = 0.0;

  double pn_eic() const {
    double s = 0.0;
    for (double v : phi) s += v;
    return phi.empty() ? 0.0 : s / static_cast<double>(phi.size());
  }
  double variance() const {
    double s = 0.0;
    for (double v : phi) s += v * v;
    return phi.empty() ? 0.0 : s / static_cast<double>(phi.size());
  }
};

class Engine {
 public:
  Engine(std::span<const SubjectPath> paths, const PooledGrid& grid, const NuisanceSet& nuis,
         const TmleOptions& opt)
      : paths_(paths), grid_(grid), nuis_(nuis), opt_(opt) {
    if (paths_.empty()) throw DataError("tmle: no subjects");
    if (!nuis_.event || !nuis_.death) throw DataError("tmle: missing intensity fits");
    if (!nuis_.treatment) throw DataError("tmle: missing treatment mechanism");
    J_ = opt_.count_cap > 0 ? opt_.count_cap : default_count_cap(paths_, grid_.horizon);
    n_ = static_cast<int>(paths_.size());
    K_ = grid_.size();
    for (const auto& [arm, w] : nuis_.intervention.support()) {
      if (w > 0.0) arms_.push_back(arm);
    }
    if (arms_.empty()) throw DataError("tmle: intervention has empty support");
    std::sort(arms_.begin(), arms_.end());
    build_frames();
    build_increment_cache();
  }

  int count_cap() const { return J_; }
  const std::vector<SubjectFrame>& frames() const { return frames_; }

  int total_truncated() const {
    int t = 0;
    for (const auto& f : frames_) t += f.truncated;
    return t;
  }

  PassResult pass(const ProcessScale& death_scale, const ProcessScale& event_scale) const {
    struct Partial {
      double num_d = 0, den_d = 0, num_y = 0, den_y = 0;
    };
    std::vector<double> mart(static_cast<size_t>(n_), 0.0);
    std::vector<double> mean(static_cast<size_t>(n_), 0.0);
    const int workers = worker_count(n_, opt_.threads);
    const int chunk = chunk_size(n_, workers);
    std::vector<Partial> partial(static_cast<size_t>(workers));

    parallel_for(n_, opt_.threads, [&](int begin, int end) {
      Partial& acc = partial[static_cast<size_t>(begin / chunk)];
      std::vector<double> z_next(static_cast<size_t>(J_));
      std::vector<double> z_cur(static_cast<size_t>(J_));
      std::vector<double> h_d, h_y, dd, dy;
      for (int i = begin; i < end; ++i) {
        const auto& f = frames_[static_cast<size_t>(i)];
        const int observed_arm = paths_[static_cast<size_t>(i)].treatment;
        const bool collect = f.pi_star_obs > 0.0;
        if (collect) {
          h_d.assign(static_cast<size_t>(f.at_risk_count), 0.0);
          h_y.assign(static_cast<size_t>(f.at_risk_count), 0.0);
          dd.assign(static_cast<size_t>(f.at_risk_count), 0.0);
          dy.assign(static_cast<size_t>(f.at_risk_count), 0.0);
        }
        double mean_i = 0.0;
        for (size_t ai = 0; ai < arms_.size(); ++ai) {
          const bool collect_here = collect && arms_[ai] == observed_arm;
          const double z11 = recurse(i, ai, death_scale, event_scale,
                                     collect_here ? &f : nullptr, z_next, z_cur, h_d, h_y, dd, dy);
          const double w_arm =
              nuis_.intervention.prob(arms_[ai], paths_[static_cast<size_t>(i)].covariates);
          mean_i += w_arm * z11;
        }
        mean[static_cast<size_t>(i)] = mean_i;
        if (collect) {
          double m = 0.0;
          for (int k = 0; k < f.at_risk_count; ++k) {
            const double w = std::min(f.raw_weight[static_cast<size_t>(k)], opt_.weight_cap);
            const double resid_d = static_cast<double>(f.dNd[static_cast<size_t>(k)]) -
                                   dd[static_cast<size_t>(k)];
            m += w * h_d[static_cast<size_t>(k)] * resid_d;
            acc.num_d += w * h_d[static_cast<size_t>(k)] * f.dNd[static_cast<size_t>(k)];
            acc.den_d += w * h_d[static_cast<size_t>(k)] * dd[static_cast<size_t>(k)];
            if (k != f.death_k) {
              const double resid_y = static_cast<double>(f.dNy[static_cast<size_t>(k)]) -
                                     dy[static_cast<size_t>(k)];
              m += w * h_y[static_cast<size_t>(k)] * resid_y;
              acc.num_y += w * h_y[static_cast<size_t>(k)] * f.dNy[static_cast<size_t>(k)];
              acc.den_y += w * h_y[static_cast<size_t>(k)] * dy[static_cast<size_t>(k)];
            }
          }
          mart[static_cast<size_t>(i)] = m;
        }
      }
    });

    PassResult out;
    for (const auto& p : partial) {
      out.num_death += p.num_d;
      out.den_death += p.den_d;
      out.num_event += p.num_y;
      out.den_event += p.den_y;
    }
    double psi = 0.0;
    for (double v : mean) psi += v;
    psi /= static_cast<double>(n_);
    out.psi = psi;
    out.phi.resize(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      out.phi[static_cast<size_t>(i)] =
          mart[static_cast<size_t>(i)] + mean[static_cast<size_t>(i)] - psi;
    }
    return out;
  }

  GcompSummary summary(const ProcessScale& death_scale, const ProcessScale& event_scale) const {
    GcompSummary s;
    s.arms = arms_;
    s.z11.resize(static_cast<size_t>(n_) * arms_.size());
    std::vector<double> z_next(static_cast<size_t>(J_)), z_cur(static_cast<size_t>(J_));
    std::vector<double> unused;
    for (int i = 0; i < n_; ++i) {
      for (size_t ai = 0; ai < arms_.size(); ++ai) {
        s.z11[static_cast<size_t>(i) * arms_.size() + ai] = recurse(
            i, ai, death_scale, event_scale, nullptr, z_next, z_cur, unused, unused, unused, unused);
      }
    }
    return s;
  }

 private:
  void build_frames() {
    frames_.resize(static_cast<size_t>(n_));
    HistoryState history{J_};
    parallel_for(n_, opt_.threads, [&](int begin, int end) {
      std::vector<double> cinc_state(static_cast<size_t>(K_));
      std::vector<double> cinc(static_cast<size_t>(K_));
      for (int i = begin; i < end; ++i) {
        const auto& path = paths_[static_cast<size_t>(i)];
        auto& f = frames_[static_cast<size_t>(i)];
        int m = 0;
        while (m < K_ && at_risk(path, grid_.times[static_cast<size_t>(m)])) ++m;
        f.at_risk_count = m;
        f.state.resize(static_cast<size_t>(m));
        f.dNy.assign(static_cast<size_t>(m), 0);
        f.dNd.assign(static_cast<size_t>(m), 0);
        size_t next_rec = 0;
        int count_before = 0;
        for (int k = 0; k < m; ++k) {
          const double t = grid_.times[static_cast<size_t>(k)];
          while (next_rec < path.records.size() && path.records[next_rec].time < t) {
            if (path.records[next_rec].kind == EventKind::Recurrent) ++count_before;
            ++next_rec;
          }
          f.state[static_cast<size_t>(k)] = history.state_of_count(count_before);
          if (next_rec < path.records.size() && path.records[next_rec].time == t) {
            switch (path.records[next_rec].kind) {
              case EventKind::Recurrent: f.dNy[static_cast<size_t>(k)] = 1; break;
              case EventKind::Death:
                f.dNd[static_cast<size_t>(k)] = 1;
                f.death_k = k;
                break;
              case EventKind::Censor: break;
            }
          }
        }

        f.pi_star_obs = nuis_.intervention.prob(path.treatment, path.covariates);
        if (f.pi_star_obs <= 0.0) continue;

        double pi_hat = nuis_.treatment->prob(path.treatment, path.covariates);
        const double eta = opt_.pi_truncation;
        pi_hat = std::clamp(pi_hat, eta, 1.0 - eta);
        if (pi_hat <= 0.0) {
          throw EstimationError("positivity failure: pi(A|L) = 0 for subject " + path.id);
        }

        // Censoring increments along the observed state trajectory.
        if (nuis_.censor) {
          int seg_begin = 0;
          while (seg_begin < m) {
            int seg_end = seg_begin;
            while (seg_end < m &&
                   f.state[static_cast<size_t>(seg_end)] == f.state[static_cast<size_t>(seg_begin)]) {
              ++seg_end;
            }
            nuis_.censor->increments(grid_, f.state[static_cast<size_t>(seg_begin)],
                                     path.treatment, path.covariates, cinc_state);
            for (int k = seg_begin; k < seg_end; ++k) {
              cinc[static_cast<size_t>(k)] = cinc_state[static_cast<size_t>(k)];
            }
            seg_begin = seg_end;
          }
        } else {
          std::fill(cinc.begin(), cinc.begin() + m, 0.0);
        }

        f.raw_weight.resize(static_cast<size_t>(m));
        double csurv = 1.0;
        for (int k = 0; k < m; ++k) {
          if (k > 0) csurv *= 1.0 - cinc[static_cast<size_t>(k - 1)];
          if (csurv < 1e-300) {
            throw EstimationError("positivity failure: censoring survival vanished for subject " +
                                  path.id);
          }
          f.min_censor_survival = std::min(f.min_censor_survival, csurv);
          const double w = f.pi_star_obs / (pi_hat * csurv);
          f.raw_weight[static_cast<size_t>(k)] = w;
          f.max_raw_weight = std::max(f.max_raw_weight, w);
          if (w > opt_.weight_cap) ++f.truncated;
        }
      }
    });
  }

  void build_increment_cache() {
    cache_.resize(static_cast<size_t>(n_) * arms_.size());
    parallel_for(n_, opt_.threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        for (size_t ai = 0; ai < arms_.size(); ++ai) {
          cache_[static_cast<size_t>(i) * arms_.size() + ai] =
              make_increment_matrix(*nuis_.death, *nuis_.event, grid_, J_, arms_[ai],
                                    paths_[static_cast<size_t>(i)].covariates);
        }
      }
    });
  }

  // Backward recursion for one (subject, arm); when frame is non-null the
  // clever covariates and observed-state increments are collected.
  double recurse(int i, size_t arm_index, const ProcessScale& ds, const ProcessScale& ys,
                 const SubjectFrame* frame, std::vector<double>& z_next,
                 std::vector<double>& z_cur, std::vector<double>& h_d, std::vector<double>& h_y,
                 std::vector<double>& dd, std::vector<double>& dy) const {
    const IncrementMatrix& inc = cache_[static_cast<size_t>(i) * arms_.size() + arm_index];
    std::fill(z_next.begin(), z_next.end(), 0.0);
    for (int k = K_ - 1; k >= 0; --k) {
      if (frame && k < frame->at_risk_count) {
        const int j = frame->state[static_cast<size_t>(k)];
        const int jn = std::min(j + 1, J_);
        const double y = ys(inc.y(k, j));
        h_y[static_cast<size_t>(k)] =
            z_next[static_cast<size_t>(jn - 1)] + 1.0 - z_next[static_cast<size_t>(j - 1)];
        h_d[static_cast<size_t>(k)] = -((1.0 - y) * z_next[static_cast<size_t>(j - 1)] +
                                        y * (1.0 + z_next[static_cast<size_t>(jn - 1)]));
        dd[static_cast<size_t>(k)] = ds(inc.d(k, j));
        dy[static_cast<size_t>(k)] = y;
      }
      for (int j = 1; j <= J_; ++j) {
        const double d = ds(inc.d(k, j));
        const double y = ys(inc.y(k, j));
        const int jn = std::min(j + 1, J_);
        z_cur[static_cast<size_t>(j - 1)] =
            (1.0 - d) * ((1.0 - y) * z_next[static_cast<size_t>(j - 1)] +
                         y * (1.0 + z_next[static_cast<size_t>(jn - 1)]));
      }
      std::swap(z_cur, z_next);
    }
    return z_next[0];
  }

  std::span<const SubjectPath> paths_;
  const PooledGrid& grid_;
  const NuisanceSet& nuis_;
  TmleOptions opt_;
  int J_ = 1, n_ = 0, K_ = 0;
  std::vector<int> arms_;
  std::vector<SubjectFrame> frames_;
  std::vector<IncrementMatrix> cache_;
};

std::pair<double, bool> solve_epsilon(double num, double den) {
  const double tiny = 1e-14;
  if (std::abs(num) < tiny && std::abs(den) < tiny) return {0.0, true};
  if (den != 0.0 && num / den > 0.0) {
    return {std::clamp(std::log(num / den), -40.0, 40.0), false};
  }
  double eps = 0.0;
  for (int it = 0; it < 50; ++it) {
    const double g = num - std::exp(eps) * den;
    const double gp = -std::exp(eps) * den;
    if (std::abs(gp) < 1e-300) break;
    const double step = std::clamp(-g / gp, -1.0, 1.0);
    eps = std::clamp(eps + step, -40.0, 40.0);
    if (std::abs(step) < 1e-12) break;
  }
  return {eps, false};
}

TmleReport make_report(const PassResult& pass, int n) {
  TmleReport rep;
  rep.psi_hat = pass.psi;
  rep.pn_eic = pass.pn_eic();
  rep.se = std::sqrt(pass.variance() / n);
  rep.ci_low = rep.psi_hat - kZ975 * rep.se;
  rep.ci_high = rep.psi_hat + kZ975 * rep.se;
  return rep;
}

}  // namespace

double clever_weight(std::span<const SubjectPath> paths, const PooledGrid& grid,
                     const NuisanceSet& nuis, size_t subject, int k,
                     const TmleOptions& options) {
  const auto& path = paths[subject];
  if (!at_risk(path, grid.times[static_cast<size_t>(k)])) {
    throw EstimationError("clever_weight: subject " + path.id + " not at risk at T_(k)");
  }
  const double pi_star = nuis.intervention.prob(path.treatment, path.covariates);
  if (pi_star == 0.0) return 0.0;
  double pi_hat = nuis.treatment->prob(path.treatment, path.covariates);
  pi_hat = std::clamp(pi_hat, options.pi_truncation, 1.0 - options.pi_truncation);
  if (pi_hat <= 0.0) {
    throw EstimationError("positivity failure: pi(A|L) = 0 for subject " + path.id);
  }
  const int J = options.count_cap > 0 ? options.count_cap : default_count_cap(paths, grid.horizon);
  HistoryState history{J};
  double csurv = 1.0;
  if (nuis.censor) {
    std::vector<double> cinc(static_cast<size_t>(grid.size()));
    for (int l = 0; l < k; ++l) {
      const int j = history.state_of(path, grid.times[static_cast<size_t>(l)]);
      nuis.censor->increments(grid, j, path.treatment, path.covariates, cinc);
      csurv *= 1.0 - cinc[static_cast<size_t>(l)];
    }
  }
  if (csurv < 1e-300) {
    throw EstimationError("positivity failure: censoring survival vanished for subject " +
                          path.id);
  }
  return std::min(pi_star / (pi_hat * csurv), options.weight_cap);
}

EicEvaluation evaluate_eic(std::span<const SubjectPath> paths, const PooledGrid& grid,
                           const NuisanceSet& nuis, const TmleOptions& options) {
  Engine engine(paths, grid, nuis, options);
  auto pass = engine.pass(ProcessScale{}, ProcessScale{});
  EicEvaluation out;
  out.psi = pass.psi;
  out.phi = std::move(pass.phi);
  out.truncated_weights = engine.total_truncated();
  return out;
}

double process_score(std::span<const SubjectPath> paths, const PooledGrid& grid,
                     const NuisanceSet& nuis, EventKind which, const TmleOptions& options) {
  if (which == EventKind::Censor) throw DataError("process_score: no censoring score");
  Engine engine(paths, grid, nuis, options);
  auto pass = engine.pass(ProcessScale{}, ProcessScale{});
  return which == EventKind::Death ? pass.num_death - pass.den_death
                                   : pass.num_event - pass.den_event;
}

TargetStepResult target_step(std::span<const SubjectPath> paths, const PooledGrid& grid,
                             const NuisanceSet& nuis, EventKind which,
                             const TmleOptions& options) {
  if (which == EventKind::Censor) throw DataError("target_step: censoring is never targeted");
  Engine engine(paths, grid, nuis, options);
  auto pass = engine.pass(ProcessScale{}, ProcessScale{});
  TargetStepResult out;
  if (which == EventKind::Death) {
    auto [eps, degenerate] = solve_epsilon(pass.num_death, pass.den_death);
    out.epsilon = eps;
    out.degenerate = degenerate;
    out.updated = apply_multiplicative_step(nuis.death, eps);
  } else {
    auto [eps, degenerate] = solve_epsilon(pass.num_event, pass.den_event);
    out.epsilon = eps;
    out.degenerate = degenerate;
    out.updated = apply_multiplicative_step(nuis.event, eps);
  }
  return out;
}

TmleReport run_tmle(std::span<const SubjectPath> paths, const PooledGrid& grid,
                    const NuisanceSet& nuis, const TmleOptions& options) {
  Engine engine(paths, grid, nuis, options);
  const int n = static_cast<int>(paths.size());

  ProcessScale death_scale, event_scale;
  PassResult pass = engine.pass(death_scale, event_scale);

  const double sigma0 = std::sqrt(pass.variance());
  const double s_n = sigma0 / (std::sqrt(static_cast<double>(n)) *
                               std::max(std::log(static_cast<double>(n)), 1.0));

  TmleReport rep;
  rep.stopping_threshold = s_n;
  rep.stopped_by = StopReason::MaxIter;
  int iter = 0;
  while (true) {
    if (std::abs(pass.pn_eic()) <= s_n) {
      rep.stopped_by = StopReason::Criterion;
      break;
    }
    if (iter >= options.max_iter) break;
    auto [eps_d, deg_d] = solve_epsilon(pass.num_death, pass.den_death);
    death_scale.apply(eps_d);
    rep.eps_death += eps_d;
    rep.eps_death_steps.push_back(eps_d);
    auto [eps_y, deg_y] = solve_epsilon(pass.num_event, pass.den_event);
    event_scale.apply(eps_y);
    rep.eps_event += eps_y;
    rep.eps_event_steps.push_back(eps_y);
    (void)deg_d;
    (void)deg_y;
    ++iter;
    pass = engine.pass(death_scale, event_scale);
  }

  TmleReport final_rep = make_report(pass, n);
  final_rep.iterations = iter;
  final_rep.stopped_by = rep.stopped_by;
  final_rep.stopping_threshold = s_n;
  final_rep.eps_death = rep.eps_death;
  final_rep.eps_event = rep.eps_event;
  final_rep.eps_death_steps = std::move(rep.eps_death_steps);
  final_rep.eps_event_steps = std::move(rep.eps_event_steps);
  final_rep.truncated_weights = engine.total_truncated();
  return final_rep;
}

GcompSummary gcomp_summary(std::span<const SubjectPath> paths, const PooledGrid& grid,
                           const NuisanceSet& nuis, const TmleOptions& options) {
  Engine engine(paths, grid, nuis, options);
  return engine.summary(ProcessScale{}, ProcessScale{});
}

TmleReport evaluate_plugin_report(std::span<const SubjectPath> paths, const PooledGrid& grid,
                                  const NuisanceSet& nuis, const TmleOptions& options) {
  Engine engine(paths, grid, nuis, options);
  auto pass = engine.pass(ProcessScale{}, ProcessScale{});
  TmleReport rep = make_report(pass, static_cast<int>(paths.size()));
  rep.iterations = 0;
  rep.stopped_by = StopReason::Criterion;
  rep.truncated_weights = engine.total_truncated();
  return rep;
}

WeightReport positivity_report(std::span<const SubjectPath> paths, const PooledGrid& grid,
                               const NuisanceSet& nuis, const TmleOptions& options) {
  Engine engine(paths, grid, nuis, options);
  WeightReport rep;
  std::vector<double> weights;
  for (const auto& f : engine.frames()) {
    if (f.pi_star_obs <= 0.0) continue;
    rep.min_censor_survival = std::min(rep.min_censor_survival, f.min_censor_survival);
    rep.truncated += f.truncated;
    rep.max_weight = std::max(rep.max_weight, f.max_raw_weight);
    for (double w : f.raw_weight) weights.push_back(w);
  }
  rep.n_weights = weights.size();
  if (!weights.empty()) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    rep.mean_weight = sum / static_cast<double>(weights.size());
    std::sort(weights.begin(), weights.end());
    for (double q : {0.5, 0.9, 0.99}) {
      size_t idx = static_cast<size_t>(q * static_cast<double>(weights.size() - 1));
      rep.quantiles.push_back(weights[idx]);
    }
  }
  rep.violation = rep.max_weight > options.weight_cap;
  return rep;
}

}  // namespace retmle
