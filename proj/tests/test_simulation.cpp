#include <doctest.h>

#include <cmath>

#include "retmle/simulation.hpp"

using namespace retmle;

namespace {

// Composite Simpson on [a, b].
template <class F>
double simpson(F f, double a, double b, int panels) {
  const double h = (b - a) / (2 * panels);
  double acc = f(a) + f(b);
  for (int i = 1; i < 2 * panels; ++i) {
    acc += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return acc * h / 3.0;
}

bool paths_equal(const std::vector<SubjectPath>& a, const std::vector<SubjectPath>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].treatment != b[i].treatment || a[i].covariates != b[i].covariates ||
        a[i].records.size() != b[i].records.size()) {
      return false;
    }
    for (size_t r = 0; r < a[i].records.size(); ++r) {
      if (a[i].records[r].time != b[i].records[r].time ||
          a[i].records[r].kind != b[i].records[r].kind) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("simulate is reproducible and valid") {
  auto spec = DgpSpec::primary();
  auto a = simulate(spec, 80, 424242);
  auto b = simulate(spec, 80, 424242);
  CHECK(paths_equal(a, b));
  auto c = simulate(spec, 80, 424243);
  CHECK(!paths_equal(a, c));
  for (const auto& p : a) CHECK_NOTHROW(validate_path(p));
}

TEST_CASE("vanishing intensities leave everyone event-free at tau") {
  auto spec = DgpSpec::primary();
  spec.event.alpha = -60.0;
  spec.death.alpha = -60.0;
  spec.censor.alpha = -60.0;
  auto paths = simulate(spec, 50, 7);
  for (const auto& p : paths) {
    CHECK(p.records.empty());
    CHECK(p.admin_end == spec.tau);
  }
}

TEST_CASE("censoring-off runs produce no censor records") {
  auto spec = DgpSpec::primary();
  SimulateOptions opt;
  opt.censoring_off = true;
  auto paths = simulate(spec, 200, 99, opt);
  bool any_censor = false;
  for (const auto& p : paths) {
    for (const auto& rec : p.records) any_censor |= rec.kind == EventKind::Censor;
  }
  CHECK(!any_censor);
}

TEST_CASE("history-free mean matches the quadrature oracle") {
  auto spec = DgpSpec::primary();
  spec.event.beta_history = 0.0;
  spec.death.beta_history = 0.0;

  // E[N^y(tau) | A=1] = E_L1 int_0^tau exp(-m_d B_d(t)) m_y b_y(t) dt with
  // m_x the multiplicative factor and B/b the cumulative/instantaneous
  // Weibull baselines.
  auto inner = [&](double l1) {
    const double m_y = std::exp(spec.event.alpha + spec.event.beta_treat +
                                spec.event.beta_l1 * l1 * l1);
    const double m_d =
        std::exp(spec.death.alpha + spec.death.beta_treat + spec.death.beta_l1 * l1);
    auto integrand = [&](double t) {
      const auto& by = spec.event.baseline;
      const auto& bd = spec.death.baseline;
      const double lam_y =
          by.shape / by.scale * std::pow(std::max(t, 1e-12) / by.scale, by.shape - 1.0);
      const double surv = std::exp(-m_d * bd.cumulative(t));
      return surv * m_y * lam_y;
    };
    return simpson(integrand, 0.0, spec.tau, 6000);
  };
  const double oracle = simpson(inner, -1.0, 1.0, 400) / 2.0;

  auto mc = true_psi(spec, 1, 400000, 5150);
  CHECK(std::abs(mc.psi - oracle) <= 4.0 * mc.mc_se + 1e-4);
}

TEST_CASE("true_psi basics") {
  SUBCASE("zero intensities give zero events") {
    auto spec = DgpSpec::primary();
    spec.event.alpha = -60.0;
    spec.death.alpha = -60.0;
    auto res = true_psi(spec, 1, 20000, 3);
    CHECK(res.psi == 0.0);
    CHECK(res.mc_se == 0.0);
  }
  SUBCASE("the estimand ignores the censoring process") {
    auto primary = DgpSpec::primary();
    auto independent = DgpSpec::independent_censoring();
    // same y coefficients; death differs through beta_l1, so align it
    independent.death.beta_l1 = primary.death.beta_l1;
    auto a = true_psi(primary, 1, 50000, 11);
    auto b = true_psi(independent, 1, 50000, 11);
    CHECK(a.psi == b.psi);  // identical draws: censoring is switched off
  }
}

TEST_CASE("primary spec produces events, deaths and censoring in sane ranges") {
  auto spec = DgpSpec::primary();
  auto paths = simulate(spec, 2000, 2024);
  int deaths = 0, censored = 0, events = 0, treated = 0;
  for (const auto& p : paths) {
    treated += p.treatment;
    for (const auto& rec : p.records) {
      deaths += rec.kind == EventKind::Death;
      censored += rec.kind == EventKind::Censor;
      events += rec.kind == EventKind::Recurrent;
    }
  }
  CHECK(treated > 800);
  CHECK(treated < 1200);
  CHECK(deaths > 0);
  CHECK(censored > 0);
  CHECK(events > 0);
}
