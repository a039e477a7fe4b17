#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "retmle/event_data.hpp"

using namespace retmle;

namespace {

std::vector<SubjectPath> from_csv(const std::string& text) {
  std::istringstream in(text);
  return ingest_csv(in);
}

}  // namespace

TEST_CASE("ingest_csv reads Andersen-Gill rows") {
  SUBCASE("recurrent then death") {
    auto paths = from_csv(
        "id,tstart,tstop,event,a,l1,l2,l3\n"
        "1,0,50,1,1,0.3,0.5,0.2\n"
        "1,50,120,2,1,0.3,0.5,0.2\n");
    REQUIRE(paths.size() == 1);
    const auto& p = paths[0];
    CHECK(p.id == "1");
    CHECK(p.treatment == 1);
    CHECK(p.covariates == std::vector<double>{0.3, 0.5, 0.2});
    REQUIRE(p.records.size() == 2);
    CHECK(p.records[0].time == 50.0);
    CHECK(p.records[0].kind == EventKind::Recurrent);
    CHECK(p.records[1].time == 120.0);
    CHECK(p.records[1].kind == EventKind::Death);
    CHECK(p.admin_end == 120.0);
  }
  SUBCASE("empty stream gives empty list") {
    auto paths = from_csv("");
    CHECK(paths.empty());
    auto header_only = from_csv("id,tstart,tstop,event,a,l1\n");
    CHECK(header_only.empty());
  }
  SUBCASE("tstop <= tstart reports the row") {
    try {
      from_csv("id,tstart,tstop,event,a,l1\n1,5,5,1,0,0.2\n");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
  }
  SUBCASE("interval after terminal event is rejected") {
    CHECK_THROWS_AS(from_csv("id,tstart,tstop,event,a,l1\n"
                             "1,0,5,2,0,0.2\n"
                             "1,5,8,1,0,0.2\n"),
                    DataError);
  }
  SUBCASE("unknown event code is rejected") {
    CHECK_THROWS_AS(from_csv("id,tstart,tstop,event,a,l1\n1,0,5,7,0,0.2\n"), DataError);
  }
  SUBCASE("gap between intervals is rejected") {
    CHECK_THROWS_AS(from_csv("id,tstart,tstop,event,a,l1\n"
                             "1,0,5,1,0,0.2\n"
                             "1,6,8,0,0,0.2\n"),
                    DataError);
  }
  SUBCASE("code 3 closes follow-up without a record") {
    auto paths = from_csv(
        "id,tstart,tstop,event,a,l1\n"
        "1,0,30,1,0,0.2\n"
        "1,30,90,3,0,0.2\n");
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].records.size() == 1);
    CHECK(paths[0].admin_end == 90.0);
    CHECK(!paths[0].terminal_time().has_value());
  }
}

TEST_CASE("validate_path rejects malformed paths") {
  SubjectPath p;
  p.id = "x";
  p.admin_end = 10.0;
  p.records = {{3.0, EventKind::Recurrent}, {3.0, EventKind::Death}};
  CHECK_THROWS_AS(validate_path(p), DataError);

  p.records = {{3.0, EventKind::Death}, {4.0, EventKind::Recurrent}};
  CHECK_THROWS_AS(validate_path(p), DataError);

  p.records = {{3.0, EventKind::Recurrent}, {4.0, EventKind::Censor}};
  CHECK_NOTHROW(validate_path(p));
}

TEST_CASE("build_grid pools, sorts and deduplicates event times") {
  std::vector<SubjectPath> paths(3);
  for (auto& p : paths) {
    p.id = "s";
    p.admin_end = 2.0;
  }
  paths[0].records = {{0.5, EventKind::Censor}};
  paths[1].records = {{0.2, EventKind::Recurrent}, {0.6, EventKind::Death}};
  paths[2].records = {{0.5, EventKind::Death}};

  SUBCASE("sort + dedupe, horizon exclusive above") {
    auto grid = build_grid(paths, 0.55);
    CHECK(grid.times == std::vector<double>{0.2, 0.5});
  }
  SUBCASE("boundary time is included") {
    auto grid = build_grid(paths, 0.6);
    CHECK(grid.times == std::vector<double>{0.2, 0.5, 0.6});
  }
  SUBCASE("no events before the horizon is a degenerate grid") {
    CHECK_THROWS_AS(build_grid(paths, 0.1), DataError);
  }
  SUBCASE("interval lengths partition [0, T_(K)]") {
    auto grid = build_grid(paths, 1.0);
    double total = 0.0;
    for (int k = 0; k < grid.size(); ++k) total += grid.interval_length(k);
    CHECK(total == doctest::Approx(grid.times.back()).epsilon(1e-15));
  }
}

TEST_CASE("at_risk uses the inclusive convention") {
  SubjectPath p;
  p.id = "r";
  p.admin_end = 1.0;
  SUBCASE("death at 0.7") {
    p.records = {{0.7, EventKind::Death}};
    CHECK(at_risk(p, 0.7));
    CHECK(!at_risk(p, 0.71));
  }
  SUBCASE("no terminal record, admin end 1") {
    CHECK(at_risk(p, 0.99));
    CHECK(at_risk(p, 1.0));
    CHECK(!at_risk(p, 1.01));
  }
}

TEST_CASE("history state caps the recurrent count") {
  SubjectPath p;
  p.id = "h";
  p.admin_end = 10.0;
  p.records = {{1.0, EventKind::Recurrent}, {2.0, EventKind::Recurrent},
               {5.0, EventKind::Recurrent}};
  HistoryState cap2{2};
  CHECK(cap2.state_of(p, 1.0) == 1);   // N^y(t-) = 0
  CHECK(cap2.state_of(p, 1.5) == 2);
  CHECK(cap2.state_of(p, 9.0) == 2);   // capped
  HistoryState cap4{4};
  CHECK(cap4.state_of(p, 9.0) == 4);
  CHECK(cap4.state_of(p, 2.5) == 3);

  // state is constant between consecutive recurrent times
  for (double t : {1.1, 1.5, 1.9}) CHECK(cap4.state_of(p, t) == 2);
}

TEST_CASE("grid construction is invariant under row permutation") {
  const std::vector<std::string> rows = {
      "1,0,30,1,1,0.3\n",  "1,30,90,2,1,0.3\n", "2,0,40,1,0,-0.2\n",
      "2,40,70,0,0,-0.2\n", "3,0,90,0,1,0.8\n",
  };
  std::vector<size_t> order = {0, 1, 2, 3, 4};
  std::mt19937_64 rng(5);
  std::vector<double> reference;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::string csv = "id,tstart,tstop,event,a,l1\n";
    for (size_t i : order) csv += rows[i];
    auto grid = build_grid(from_csv(csv), 100.0);
    if (trial == 0) {
      reference = grid.times;
    } else {
      CHECK(grid.times == reference);
    }
  }
}

TEST_CASE("pooled recurrent jumps equal per-subject record counts") {
  auto paths = from_csv(
      "id,tstart,tstop,event,a,l1\n"
      "1,0,30,1,1,0.3\n"
      "1,30,90,2,1,0.3\n"
      "2,0,30,1,0,-0.2\n"
      "2,30,70,0,0,-0.2\n");
  auto grid = build_grid(paths, 100.0);
  for (double t : grid.times) {
    int pooled = 0;
    for (const auto& p : paths) {
      for (const auto& rec : p.records) {
        if (rec.time == t && rec.kind == EventKind::Recurrent) ++pooled;
      }
    }
    if (t == 30.0) CHECK(pooled == 2);
  }
}

TEST_CASE("default count cap is one plus the maximum observed count") {
  auto paths = from_csv(
      "id,tstart,tstop,event,a,l1\n"
      "1,0,10,1,1,0.3\n"
      "1,10,20,1,1,0.3\n"
      "1,20,90,2,1,0.3\n"
      "2,0,70,0,0,-0.2\n");
  CHECK(default_count_cap(paths, 100.0) == 3);
  CHECK(default_count_cap(paths, 15.0) == 2);
}
