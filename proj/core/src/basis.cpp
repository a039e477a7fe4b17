#include "retmle/basis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

namespace retmle {

bool BasisColumn::has_time_factor() const {
  for (const auto& f : factors) {
    if (f.domain == IndicatorFactor::Domain::Time) return true;
  }
  return false;
}

double BasisColumn::time_threshold() const {
  for (const auto& f : factors) {
    if (f.domain == IndicatorFactor::Domain::Time) return f.threshold;
  }
  return 0.0;
}

double BasisColumn::value_static(double history_v, std::span<const double> x) const {
  for (const auto& f : factors) {
    switch (f.domain) {
      case IndicatorFactor::Domain::Time:
        break;
      case IndicatorFactor::Domain::Covariate:
        if (!(x[static_cast<size_t>(f.coord)] >= f.threshold)) return 0.0;
        break;
      case IndicatorFactor::Domain::History:
        if (!(history_v >= f.threshold)) return 0.0;
        break;
    }
  }
  if (raw_coord >= 0) {
    double v = x[static_cast<size_t>(raw_coord)];
    double out = v;
    for (int p = 1; p < raw_power; ++p) out *= v;
    return out;
  }
  return 1.0;
}

double BasisColumn::value(double t, double history_v, std::span<const double> x) const {
  if (has_time_factor() && !(t >= time_threshold())) return 0.0;
  return value_static(history_v, x);
}

namespace {

struct Section {
  IndicatorFactor::Domain domain;
  int coord;
  const std::vector<double>* knots;
};

void enumerate_rec(const std::vector<Section>& sections, size_t next, int remaining,
                   BasisColumn& current, std::vector<BasisColumn>& out) {
  if (!current.factors.empty()) out.push_back(current);
  if (remaining == 0) return;
  for (size_t s = next; s < sections.size(); ++s) {
    for (double knot : *sections[s].knots) {
      current.factors.push_back({sections[s].domain, sections[s].coord, knot});
      enumerate_rec(sections, s + 1, remaining - 1, current, out);
      current.factors.pop_back();
    }
  }
}

std::vector<double> quantile_knots(std::vector<double> values, int count) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() <= 1) return {};  // constant column, indicator would be trivial
  // Drop the minimum: 1{x >= min} is identically one on the sample.
  std::vector<double> distinct(values.begin() + 1, values.end());
  if (static_cast<int>(distinct.size()) <= count) return distinct;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(count));
  const double step = static_cast<double>(distinct.size() - 1) / (count - 1);
  for (int i = 0; i < count; ++i) {
    out.push_back(distinct[static_cast<size_t>(std::llround(i * step))]);
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

std::vector<BasisColumn> BasisSpec::enumerate() const {
  std::vector<Section> sections;
  if (!time_knots.empty()) {
    sections.push_back({IndicatorFactor::Domain::Time, 0, &time_knots});
  }
  for (size_t c = 0; c < covariate_knots.size(); ++c) {
    if (!covariate_knots[c].empty()) {
      sections.push_back({IndicatorFactor::Domain::Covariate, static_cast<int>(c),
                          &covariate_knots[c]});
    }
  }
  if (!history_knots.empty()) {
    sections.push_back({IndicatorFactor::Domain::History, 0, &history_knots});
  }
  std::vector<BasisColumn> out;
  BasisColumn scratch;
  enumerate_rec(sections, 0, std::max(1, max_interaction_order), scratch, out);
  return out;
}

BasisSpec make_default_basis(std::span<const SubjectPath> paths, const PooledGrid& grid,
                             int count_cap, int time_knot_cap, int covariate_knot_count,
                             int max_interaction_order) {
  BasisSpec spec;
  spec.max_interaction_order = max_interaction_order;
  // Grid times past the first: 1{t >= T_(1)} holds on every design row.
  if (grid.size() > 1) {
    std::vector<double> later(grid.times.begin() + 1, grid.times.end());
    spec.time_knots = quantile_knots(std::move(later), time_knot_cap);
    // quantile_knots dropped the minimum; reinstate it, T_(2) is a real knot.
    if (grid.size() >= 2) {
      spec.time_knots.insert(spec.time_knots.begin(), grid.times[1]);
      spec.time_knots.erase(std::unique(spec.time_knots.begin(), spec.time_knots.end()),
                            spec.time_knots.end());
    }
  }
  const size_t d = paths.empty() ? 0 : paths.front().covariates.size();
  spec.covariate_knots.resize(d + 1);
  for (size_t c = 0; c < d; ++c) {
    std::vector<double> values;
    values.reserve(paths.size());
    for (const auto& p : paths) values.push_back(p.covariates[c]);
    spec.covariate_knots[c] = quantile_knots(std::move(values), covariate_knot_count);
  }
  {
    std::vector<double> values;
    values.reserve(paths.size());
    for (const auto& p : paths) values.push_back(static_cast<double>(p.treatment));
    spec.covariate_knots[d] = quantile_knots(std::move(values), covariate_knot_count);
  }
  for (int v = 1; v < count_cap; ++v) spec.history_knots.push_back(static_cast<double>(v));
  return spec;
}

std::vector<double> thin_time_knots(const PooledGrid& grid, int cap) {
  if (grid.size() <= 1) return {};
  std::vector<double> later(grid.times.begin() + 1, grid.times.end());
  auto knots = quantile_knots(std::move(later), cap);
  knots.insert(knots.begin(), grid.times[1]);
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  return knots;
}

double PoissonDesign::total_exposure() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.exposure;
  return s;
}

double PoissonDesign::total_events() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.events;
  return s;
}

namespace {

struct PatternHash {
  size_t operator()(const std::vector<std::pair<int, double>>& v) const {
    size_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t bits) {
      h ^= bits;
      h *= 1099511628211ull;
    };
    for (const auto& [c, x] : v) {
      mix(static_cast<uint64_t>(c));
      uint64_t xb;
      static_assert(sizeof(xb) == sizeof(x));
      std::memcpy(&xb, &x, sizeof(xb));
      mix(xb);
    }
    return h;
  }
};

}  // namespace

PoissonDesign expand_design(std::span<const SubjectPath> paths, const PooledGrid& grid,
                            EventKind kind, std::span<const BasisColumn> columns,
                            int count_cap) {
  PoissonDesign design;
  design.n_columns = static_cast<int>(columns.size());
  design.n_subjects = static_cast<int>(paths.size());
  design.pattern_offsets.push_back(0);

  std::unordered_map<std::vector<std::pair<int, double>>, int, PatternHash> pattern_ids;
  HistoryState history{count_cap};
  const int K = grid.size();

  // Sorted unique time gates; a pattern can only change when one opens.
  std::vector<double> gates;
  for (const auto& col : columns) {
    if (col.has_time_factor()) gates.push_back(col.time_threshold());
  }
  std::sort(gates.begin(), gates.end());
  gates.erase(std::unique(gates.begin(), gates.end()), gates.end());

  std::vector<double> x;
  std::vector<double> static_val(columns.size());
  std::vector<std::pair<int, double>> pattern;

  for (size_t i = 0; i < paths.size(); ++i) {
    const auto& path = paths[i];
    x.assign(path.covariates.begin(), path.covariates.end());
    x.push_back(static_cast<double>(path.treatment));

    size_t next_record = 0;
    int current_v = -1;
    size_t gate_idx = 0;
    int pattern_id = -1;

    for (int k = 0; k < K; ++k) {
      const double t = grid.times[static_cast<size_t>(k)];
      if (!at_risk(path, t)) break;
      const int v = history.state_of_count(path.recurrent_before(t)) - 1;
      bool rebuild = pattern_id < 0;
      if (v != current_v) {
        current_v = v;
        for (size_t c = 0; c < columns.size(); ++c) {
          static_val[c] = columns[c].value_static(static_cast<double>(v), x);
        }
        rebuild = true;
      }
      while (gate_idx < gates.size() && gates[gate_idx] <= t) {
        ++gate_idx;
        rebuild = true;
      }
      if (rebuild) {
        pattern.clear();
        for (size_t c = 0; c < columns.size(); ++c) {
          if (static_val[c] == 0.0) continue;
          if (columns[c].has_time_factor() && !(t >= columns[c].time_threshold())) continue;
          pattern.emplace_back(static_cast<int>(c), static_val[c]);
        }
        auto [it, inserted] = pattern_ids.try_emplace(pattern, design.n_patterns());
        if (inserted) {
          for (const auto& [c, val] : pattern) {
            design.pattern_cols.push_back(c);
            design.pattern_values.push_back(val);
          }
          design.pattern_offsets.push_back(static_cast<int>(design.pattern_cols.size()));
        }
        pattern_id = it->second;
      }

      double events = 0.0;
      while (next_record < path.records.size() && path.records[next_record].time < t) {
        ++next_record;
      }
      if (next_record < path.records.size() && path.records[next_record].time == t &&
          path.records[next_record].kind == kind) {
        events = 1.0;
      }
      design.rows.push_back({static_cast<int>(i), pattern_id, grid.interval_length(k), events});
    }
  }
  return design;
}

}  // namespace retmle
