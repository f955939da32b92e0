#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lidec/dynamics.hpp"
#include "lidec/errors.hpp"
#include "lidec/estimation.hpp"
#include "test_support.hpp"

using namespace lidec;

namespace {

CurveSamples synthetic(double omega, double lambda, double p_inf, double amp, double phase, int n, double span,
                       double noise = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  CurveSamples c;
  for (int i = 0; i < n; ++i) {
    const double t = span * (i + 1) / n;
    c.tau.push_back(t);
    c.p1.push_back(p_inf + amp * std::exp(-lambda * t) * std::cos(omega * t + phase) + noise * gauss(rng));
  }
  if (noise > 0) c.sigma.assign(static_cast<std::size_t>(n), noise);
  return c;
}

double phase_err(double a, double b) { return std::abs(std::remainder(a - b, 2 * std::numbers::pi)); }

}  // namespace

TEST_CASE("noiseless damped cosine is recovered") {
  const double omega = from_2pi_khz(4.2), lambda = from_2pi_khz(0.05);
  const auto c = synthetic(omega, lambda, 0.75, 0.25, std::numbers::pi, 300, 10 * 2 * std::numbers::pi / omega);
  const auto fit = fit_nutation(c);
  CHECK(fit.converged);
  CHECK(test::rel_err(fit.omega, omega) < 1e-3);
  CHECK(test::rel_err(fit.lambda, lambda) < 1e-3);
  CHECK(test::rel_err(fit.p_inf, 0.75) < 1e-3);
  CHECK(test::rel_err(fit.amplitude, 0.25) < 1e-3);
  CHECK(phase_err(fit.phase, std::numbers::pi) < 1e-3);
  CHECK(fit.residual_rms < 1e-8);
  CHECK_FALSE(fit.low_confidence);
  for (double t : {0.0, 1e-4, 1e-3}) {
    CHECK(nutation_model(fit, t) == doctest::Approx(0.75 + 0.25 * std::exp(-lambda * t) * std::cos(omega * t + std::numbers::pi)).epsilon(1e-6));
  }
}

TEST_CASE("undamped Rabi curve") {
  const double omega = from_2pi_khz(4.2);
  CurveSamples c;
  for (int i = 0; i < 200; ++i) {
    const double t = i * 2.5e-5;
    c.tau.push_back(t);
    c.p1.push_back(std::pow(std::sin(omega * t / 2), 2));
  }
  const auto fit = fit_nutation(c);
  CHECK(fit.converged);
  CHECK(fit.lambda < 1e-6 * omega);
  CHECK(fit.p_inf == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(fit.amplitude == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(phase_err(fit.phase, std::numbers::pi) < 1e-6);
  CHECK(fit.lambda >= 0.0);
}

TEST_CASE("overdamped and undersized curves are unresolved") {
  const double omega = 1000.0;
  const auto over = synthetic(omega, 3 * omega, 0.7, -0.3, 0.0, 200, 0.01);
  try {
    const auto fit = fit_nutation(over);
    // A returned fit must at least not claim a confident oscillation.
    CHECK(fit.low_confidence);
  } catch (const OscillationUnresolved&) {
    CHECK(true);
  }

  CHECK_THROWS_AS(fit_nutation(synthetic(omega, 1.0, 0.5, 0.5, 0.0, 7, 0.1)), OscillationUnresolved);
  // Half a period only.
  CHECK_THROWS_AS(fit_nutation(synthetic(omega, 1.0, 0.5, 0.5, 0.0, 50, 0.5 * 2 * std::numbers::pi / omega)),
                  OscillationUnresolved);
}

TEST_CASE("fit round trip with 1% noise") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int failures = 0;
  for (int k = 0; k < 50; ++k) {
    const double omega = from_2pi_khz(1.0 + 9.0 * u(rng));
    const double ratio = std::exp(std::log(0.001) + (std::log(0.3) - std::log(0.001)) * u(rng));
    const double lambda = ratio * omega;
    const double p_inf = 0.55 + 0.4 * u(rng);
    const double amp = 0.25 + 0.25 * u(rng);
    const double phase = -std::numbers::pi + 2 * std::numbers::pi * u(rng);
    // Three envelope times, capped at 100 periods (three samples per period).
    const double period = 2 * std::numbers::pi / omega;
    const double span = std::min(3 / lambda, 100 * period);
    const auto c = synthetic(omega, lambda, p_inf, amp, phase, 300, span, 0.01, 1000 + k);
    const auto fit = fit_nutation(c);
    const bool ok = fit.converged && test::rel_err(fit.omega, omega) < 0.05 && test::rel_err(fit.lambda, lambda) < 0.05 &&
                    test::rel_err(fit.p_inf, p_inf) < 0.05 && test::rel_err(fit.amplitude, amp) < 0.05 &&
                    phase_err(fit.phase, phase) < 0.05 * 2 * std::numbers::pi;
    if (!ok) {
      ++failures;
      MESSAGE("draw " << k << ": omega " << fit.omega / omega << " lambda " << fit.lambda / lambda << " p_inf "
                      << fit.p_inf / p_inf << " amp " << fit.amplitude / amp);
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("fit is covariant under time rescaling") {
  const double omega = 3000.0;
  auto c = synthetic(omega, 150.0, 0.8, 0.15, 0.4, 120, 0.02, 0.01, 5);
  const auto base = fit_nutation(c);
  for (double s : {1e-3, 0.5, 7.0, 1e4}) {
    CurveSamples scaled = c;
    for (double& t : scaled.tau) t *= s;
    const auto fit = fit_nutation(scaled);
    CHECK(fit.omega * s == doctest::Approx(base.omega).epsilon(1e-9));
    CHECK(fit.lambda * s == doctest::Approx(base.lambda).epsilon(1e-9));
    CHECK(fit.p_inf == doctest::Approx(base.p_inf).epsilon(1e-9));
  }
}

TEST_CASE("converged fits show a monotone cost over the last steps") {
  const auto c = synthetic(2000.0, 60.0, 0.7, 0.2, 1.0, 200, 0.03, 0.01, 77);
  const auto fit = fit_nutation(c);
  REQUIRE(fit.converged);
  const auto& h = fit.cost_history;
  REQUIRE(h.size() >= 3);
  for (std::size_t i = h.size() - 3; i + 1 < h.size(); ++i) CHECK(h[i + 1] <= h[i]);
  CHECK(fit.p_inf >= 0.0);
  CHECK(fit.p_inf <= 1.0);
}

TEST_CASE("invert saturation") {
  CHECK(invert_saturation(2.0 / 3.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(invert_saturation(1.0) == 0.0);
  CHECK(invert_saturation(0.75) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(invert_saturation(0.5), OutOfRange);
  CHECK_THROWS_AS(invert_saturation(0.3), OutOfRange);
  CHECK_THROWS_AS(invert_saturation(1.01), OutOfRange);

  double worst = 0;
  for (int i = 0; i <= 1200; ++i) {
    const double k = std::pow(10.0, -6.0 + 12.0 * i / 1200);
    worst = std::max(worst, test::rel_err(invert_saturation(saturation_from_ratio(k)), k));
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-10);
}

TEST_CASE("effective rates from a fit") {
  NutationFit fit;
  fit.omega = 2.0e4;
  fit.lambda = 500.0;
  fit.p_inf = 2.0 / 3.0;
  fit.converged = true;
  const double omega_mw = 2.6e4;
  const auto eff = effective_from_fit(fit, omega_mw);
  CHECK(eff.gamma_eff == 500.0);
  CHECK(eff.longitudinal() == doctest::Approx(omega_mw * omega_mw / 1000.0).epsilon(1e-13));
  CHECK(eff.saturation() == fit.p_inf);

  fit.p_inf = 1.0;
  CHECK_FALSE(effective_from_fit(fit, omega_mw).Gamma_eff.has_value());

  fit.lambda = 0.0;
  CHECK_THROWS_AS(effective_from_fit(fit, omega_mw), DegenerateRates);
  fit.lambda = 500.0;
  fit.p_inf = 0.4;
  CHECK_THROWS_AS(effective_from_fit(fit, omega_mw), OutOfRange);
  fit.p_inf = 0.7;
  fit.converged = false;
  CHECK_THROWS_AS(effective_from_fit(fit, omega_mw), NoConvergence);
}

TEST_CASE("strongly damped reference curve is not a resolvable oscillation") {
  // √(2r₁γ_l) = 700 puts r₁ far above Ω, so no nutation survives.
  PhysicalParams p = test::reference_params();
  const auto r = test::rates_from_rabi(700.0, 700.0, p);
  CHECK(r.r1 > 5 * p.omega_mw);
  IntegratorConfig cfg;
  cfg.method = IntegrationMethod::kPropagator;
  const auto times = uniform_grid(10e-6, 300, false);
  const auto tr = integrate(SystemState::populations(0.8, 0.2), p, r, cfg, std::span<const double>(times));
  try {
    const auto fit = fit_nutation(CurveSamples{times, tr.p1(), {}});
    CHECK(fit.low_confidence);
  } catch (const OscillationUnresolved&) {
    CHECK(true);
  }
}

TEST_CASE("design round trip at fixed field") {
  PhysicalParams tmpl = test::reference_params();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    // Targets produced by a forward evaluation at random knobs are feasible.
    PhysicalParams q = tmpl;
    q.i0 = std::pow(10.0, -5.0 + 3.0 * u(rng));
    q.alpha = 0.05 + 1.45 * u(rng);
    const auto want = effective_rates(q, scattering_rates(q));
    DesignTarget t;
    t.gamma_target = want.gamma_eff;
    t.Gamma_target = want.longitudinal();
    t.omega_mw = tmpl.omega_mw;
    t.delta_laser = tmpl.delta_laser;
    const auto res = design_decoherence(t, tmpl);
    CHECK(test::rel_err(res.achieved.gamma_eff, t.gamma_target) < 1e-3);
    CHECK(test::rel_err(res.achieved.longitudinal(), t.Gamma_target) < 1e-3);
    CHECK(test::rel_err(res.i0, q.i0) < 1e-3);
    CHECK(std::abs(res.alpha - q.alpha) < 1e-3);
    CHECK(res.newton_steps <= 20);
    const auto fwd = effective_rates(res.params, scattering_rates(res.params));
    CHECK(test::rel_err(fwd.gamma_eff, t.gamma_target) < 1e-3);
  }
}

TEST_CASE("design: equal gamma and Gamma at zero field, pure dephasing limit") {
  PhysicalParams tmpl = test::reference_params();
  tmpl.zeeman_delta = 0.0;
  DesignTarget t;
  t.omega_mw = tmpl.omega_mw;
  t.delta_laser = tmpl.delta_laser;
  // γ = Γ = Ω requires r₂/r₁ = Ω²/(Γγ) = 1, i.e. tan²α = ½ at B = 0.
  t.gamma_target = tmpl.omega_mw;
  t.Gamma_target = tmpl.omega_mw;
  auto res = design_decoherence(t, tmpl);
  CHECK(test::rel_err(res.achieved.gamma_eff, t.gamma_target) < 1e-3);
  CHECK(test::rel_err(res.achieved.longitudinal(), t.Gamma_target) < 1e-3);
  CHECK(std::abs(std::tan(res.alpha) * std::tan(res.alpha) - 0.5) < 1e-3);

  // r₂/r₁ → 0 pushes α to 0.
  t.gamma_target = 2000.0;
  t.Gamma_target = 1e6 * tmpl.omega_mw * tmpl.omega_mw / t.gamma_target;
  res = design_decoherence(t, tmpl);
  CHECK(res.alpha < 2e-3);
}

TEST_CASE("design infeasibility names the binding constraint") {
  PhysicalParams tmpl = test::reference_params();
  DesignTarget t;
  t.omega_mw = tmpl.omega_mw;
  t.delta_laser = tmpl.delta_laser;
  t.gamma_target = from_2pi_khz(5.0);
  t.Gamma_target = from_2pi_khz(5.0);
  t.i0_max = 1e-6;
  try {
    design_decoherence(t, tmpl);
    FAIL("expected Infeasible");
  } catch (const Infeasible& e) {
    CHECK(e.binding() == "i0_max");
  }

  t.i0_max = 1.0;
  t.alpha_max = 0.1;
  try {
    design_decoherence(t, tmpl);
    FAIL("expected Infeasible");
  } catch (const Infeasible& e) {
    CHECK(e.binding() == "alpha_max");
  }

  t.alpha_max = std::numbers::pi / 2;
  t.gamma_target = 10 * tmpl.gamma3;
  try {
    design_decoherence(t, tmpl);
    FAIL("expected Infeasible");
  } catch (const Infeasible& e) {
    CHECK(e.binding() == "saturation");
  }

  tmpl.gamma_ph_extra = 1e4;
  t.gamma_target = 5e3;
  try {
    design_decoherence(t, tmpl);
    FAIL("expected Infeasible");
  } catch (const Infeasible& e) {
    CHECK(e.binding() == "gamma_ph_extra");
  }

  t.gamma_target = -1.0;
  CHECK_THROWS_AS(design_decoherence(t, tmpl), std::invalid_argument);
}

TEST_CASE("design with free field minimizes the intensity") {
  PhysicalParams tmpl = test::reference_params();
  DesignTarget t;
  t.omega_mw = tmpl.omega_mw;
  t.delta_laser = tmpl.delta_laser;
  t.gamma_target = from_2pi_khz(0.5);
  t.Gamma_target = from_2pi_khz(0.8);
  t.zeeman_min = from_2pi_khz(-5000.0);
  t.zeeman_max = from_2pi_khz(5000.0);
  const auto fixed = design_decoherence(t, tmpl);
  t.free_zeeman = true;
  const auto free = design_decoherence(t, tmpl);
  CHECK(test::rel_err(free.achieved.gamma_eff, t.gamma_target) < 1e-3);
  CHECK(test::rel_err(free.achieved.longitudinal(), t.Gamma_target) < 1e-3);
  CHECK(free.i0 <= fixed.i0 * (1 + 1e-9));
  CHECK(free.zeeman_delta >= t.zeeman_min);
  CHECK(free.zeeman_delta <= t.zeeman_max);
  // Moving B away from the optimum needs more light.
  for (double dz : {-from_2pi_khz(50.0), from_2pi_khz(50.0)}) {
    PhysicalParams moved = tmpl;
    moved.zeeman_delta = std::clamp(free.zeeman_delta + dz, t.zeeman_min, t.zeeman_max);
    DesignTarget fixed_t = t;
    fixed_t.free_zeeman = false;
    CHECK(design_decoherence(fixed_t, moved).i0 >= free.i0 * (1 - 1e-6));
  }
}
