#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retmle {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EventKind { Recurrent, Death, Censor };

const char* to_string(EventKind kind);

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::Recurrent;
};

/// One subject's baseline data and time-ordered event history.
/// Record times are strictly increasing; at most one terminal
/// (Death or Censor) record, which is always the last one.
struct SubjectPath {
  std::string id;
  std::vector<double> covariates;
  int treatment = 0;
  std::vector<EventRecord> records;
  double admin_end = 0.0;  // end of follow-up when no terminal record

  std::optional<double> terminal_time() const;
  bool has_death() const;
  std::optional<double> death_time() const;
  std::optional<double> censor_time() const;

  /// Terminal time if present, otherwise admin_end.
  double end_time() const;

  /// N^y(t-): recurrent events strictly before t.
  int recurrent_before(double t) const;
  /// N^y(t): recurrent events at or before t.
  int recurrent_through(double t) const;
};

/// Ordered unique event times across the sample, capped at the horizon.
struct PooledGrid {
  std::vector<double> times;  // strictly increasing, all <= horizon
  double horizon = 0.0;

  int size() const { return static_cast<int>(times.size()); }
  /// Length of the interval (T_(k-1), T_(k)], with T_(0) = 0.
  double interval_length(int k) const {
    return times[static_cast<size_t>(k)] - (k == 0 ? 0.0 : times[static_cast<size_t>(k) - 1]);
  }
};

/// Capped-count history summary: state_of maps a path's past to
/// j = min(N^y(t-), J-1) + 1 in {1, ..., J}.
struct HistoryState {
  int count_cap = 1;  // J

  int state_of(const SubjectPath& path, double t) const;
  /// State from a raw count of past recurrent events.
  int state_of_count(int n_recurrent_before) const;
};

struct CsvSpec {
  char delimiter = ',';
};

/// Throws DataError describing the first violated invariant.
void validate_path(const SubjectPath& path);

/// Andersen-Gill counting-process CSV: header id,tstart,tstop,event,a,l1...ld,
/// one row per at-risk interval, event code applying at tstop.
/// Codes: 0=censor, 1=recurrent, 2=death, 3=interval end without event.
std::vector<SubjectPath> ingest_csv(std::istream& source, const CsvSpec& spec = {});

PooledGrid build_grid(std::span<const SubjectPath> paths, double horizon);

/// 1{T^end >= t}: true iff no terminal event strictly before t and
/// follow-up reaches t.
bool at_risk(const SubjectPath& path, double t);

/// Default cap J = 1 + max observed N^y(horizon) over the sample.
int default_count_cap(std::span<const SubjectPath> paths, double horizon);

}  // namespace retmle
