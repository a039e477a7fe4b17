#include "retmle/event_data.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>

namespace retmle {

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Recurrent: return "recurrent";
    case EventKind::Death: return "death";
    case EventKind::Censor: return "censor";
  }
  return "?";
}

std::optional<double> SubjectPath::terminal_time() const {
  for (const auto& rec : records) {
    if (rec.kind != EventKind::Recurrent) return rec.time;
  }
  return std::nullopt;
}

bool SubjectPath::has_death() const {
  return death_time().has_value();
}

std::optional<double> SubjectPath::death_time() const {
  for (const auto& rec : records) {
    if (rec.kind == EventKind::Death) return rec.time;
  }
  return std::nullopt;
}

std::optional<double> SubjectPath::censor_time() const {
  for (const auto& rec : records) {
    if (rec.kind == EventKind::Censor) return rec.time;
  }
  return std::nullopt;
}

double SubjectPath::end_time() const {
  auto t = terminal_time();
  return t ? *t : admin_end;
}

int SubjectPath::recurrent_before(double t) const {
  int n = 0;
  for (const auto& rec : records) {
    if (rec.time >= t) break;
    if (rec.kind == EventKind::Recurrent) ++n;
  }
  return n;
}

int SubjectPath::recurrent_through(double t) const {
  int n = 0;
  for (const auto& rec : records) {
    if (rec.time > t) break;
    if (rec.kind == EventKind::Recurrent) ++n;
  }
  return n;
}

int HistoryState::state_of(const SubjectPath& path, double t) const {
  return state_of_count(path.recurrent_before(t));
}

int HistoryState::state_of_count(int n_recurrent_before) const {
  return std::min(n_recurrent_before, count_cap - 1) + 1;
}

void validate_path(const SubjectPath& path) {
  auto fail = [&](const std::string& what) {
    throw DataError("subject " + path.id + ": " + what);
  };
  if (!(path.admin_end > 0.0)) fail("admin_end must be positive");
  double prev = 0.0;
  bool terminal_seen = false;
  for (const auto& rec : path.records) {
    if (!(rec.time > 0.0)) fail("record time must be positive");
    if (rec.time <= prev && prev > 0.0) fail("record times must be strictly increasing");
    if (terminal_seen) fail("record after terminal event");
    if (rec.kind != EventKind::Recurrent) terminal_seen = true;
    prev = rec.time;
  }
  if (prev > path.admin_end) fail("record time beyond admin_end");
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& field, long row, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing");
    if (!std::isfinite(v)) throw std::invalid_argument("nonfinite");
    return v;
  } catch (const std::exception&) {
    throw DataError("row " + std::to_string(row) + ": cannot parse " + what + " '" + field + "'");
  }
}

struct CsvRow {
  long row;
  double tstart, tstop;
  int event;
  int treatment;
  std::vector<double> covariates;
};

}  // namespace

std::vector<SubjectPath> ingest_csv(std::istream& source, const CsvSpec& spec) {
  std::string line;
  if (!std::getline(source, line)) return {};
  auto header = split_line(trim(line), spec.delimiter);
  const char* expected[] = {"id", "tstart", "tstop", "event", "a"};
  if (header.size() < 5) throw DataError("header must start with id,tstart,tstop,event,a");
  for (int i = 0; i < 5; ++i) {
    if (trim(header[static_cast<size_t>(i)]) != expected[i]) {
      throw DataError("header column " + std::to_string(i + 1) + " must be '" +
                      expected[i] + "', got '" + trim(header[static_cast<size_t>(i)]) + "'");
    }
  }
  const size_t n_cov = header.size() - 5;

  // Collect rows grouped by id; row order inside a group is by tstart so the
  // result does not depend on the physical row order of the file.
  std::vector<std::string> id_order;
  std::map<std::string, std::vector<CsvRow>> groups;
  long row_no = 1;
  while (std::getline(source, line)) {
    ++row_no;
    auto trimmed = trim(line);
    if (trimmed.empty()) continue;
    auto fields = split_line(trimmed, spec.delimiter);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    CsvRow rec;
    rec.row = row_no;
    std::string id = trim(fields[0]);
    if (id.empty()) throw DataError("row " + std::to_string(row_no) + ": empty id");
    rec.tstart = parse_real(trim(fields[1]), row_no, "tstart");
    rec.tstop = parse_real(trim(fields[2]), row_no, "tstop");
    double ev = parse_real(trim(fields[3]), row_no, "event");
    if (ev != 0.0 && ev != 1.0 && ev != 2.0 && ev != 3.0) {
      throw DataError("row " + std::to_string(row_no) + ": unknown event code '" +
                      trim(fields[3]) + "'");
    }
    rec.event = static_cast<int>(ev);
    double a = parse_real(trim(fields[4]), row_no, "a");
    rec.treatment = static_cast<int>(std::lround(a));
    if (std::abs(a - rec.treatment) > 1e-9) {
      throw DataError("row " + std::to_string(row_no) + ": treatment must be integral");
    }
    rec.covariates.reserve(n_cov);
    for (size_t c = 0; c < n_cov; ++c) {
      rec.covariates.push_back(parse_real(trim(fields[5 + c]), row_no, "covariate"));
    }
    if (!(rec.tstop > rec.tstart)) {
      throw DataError("row " + std::to_string(row_no) + ": tstop must exceed tstart");
    }
    if (rec.tstart < 0.0) {
      throw DataError("row " + std::to_string(row_no) + ": tstart must be non-negative");
    }
    if (groups.find(id) == groups.end()) id_order.push_back(id);
    groups[id].push_back(std::move(rec));
  }

  std::vector<SubjectPath> paths;
  paths.reserve(id_order.size());
  for (const auto& id : id_order) {
    auto& rows = groups[id];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CsvRow& a, const CsvRow& b) { return a.tstart < b.tstart; });
    SubjectPath path;
    path.id = id;
    path.treatment = rows.front().treatment;
    path.covariates = rows.front().covariates;
    double cursor = 0.0;
    bool terminal_seen = false;
    for (const auto& r : rows) {
      if (terminal_seen) {
        throw DataError("row " + std::to_string(r.row) + ": interval after terminal event");
      }
      if (r.tstart != cursor) {
        throw DataError("row " + std::to_string(r.row) +
                        ": intervals must be contiguous (expected tstart " +
                        std::to_string(cursor) + ")");
      }
      if (r.treatment != path.treatment || r.covariates != path.covariates) {
        throw DataError("row " + std::to_string(r.row) +
                        ": treatment/covariates change within subject");
      }
      switch (r.event) {
        case 1: path.records.push_back({r.tstop, EventKind::Recurrent}); break;
        case 2: path.records.push_back({r.tstop, EventKind::Death}); terminal_seen = true; break;
        case 0: path.records.push_back({r.tstop, EventKind::Censor}); terminal_seen = true; break;
        case 3: break;  // administrative interval end, no event
      }
      cursor = r.tstop;
    }
    path.admin_end = cursor;
    validate_path(path);
    paths.push_back(std::move(path));
  }
  return paths;
}

PooledGrid build_grid(std::span<const SubjectPath> paths, double horizon) {
  if (paths.empty()) throw DataError("build_grid: no subjects");
  if (!(horizon > 0.0)) throw DataError("build_grid: horizon must be positive");
  PooledGrid grid;
  grid.horizon = horizon;
  for (const auto& path : paths) {
    for (const auto& rec : path.records) {
      if (rec.time <= horizon) grid.times.push_back(rec.time);
    }
  }
  std::sort(grid.times.begin(), grid.times.end());
  grid.times.erase(std::unique(grid.times.begin(), grid.times.end()), grid.times.end());
  if (grid.times.empty()) {
    throw DataError("build_grid: degenerate grid, no events at or before the horizon");
  }
  return grid;
}

bool at_risk(const SubjectPath& path, double t) {
  return t <= path.end_time();
}

int default_count_cap(std::span<const SubjectPath> paths, double horizon) {
  int max_count = 0;
  for (const auto& path : paths) {
    max_count = std::max(max_count, path.recurrent_through(horizon));
  }
  return max_count + 1;
}

}  // namespace retmle
