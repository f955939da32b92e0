#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "lidec/dynamics.hpp"
#include "lidec/estimation.hpp"
#include "test_support.hpp"

using namespace lidec;

namespace {

IntegratorConfig with_method(IntegrationMethod m) {
  IntegratorConfig c;
  c.method = m;
  return c;
}

void check_hygiene(const Trajectory& tr, double tol = 1e-9) {
  for (const auto& s : tr.states) {
    CHECK(std::abs(s.trace() - 1.0) < tol);
    for (double n : {s.n0(), s.n1(), s.n2(), s.n3()}) {
      CHECK(n >= -tol);
      CHECK(n <= 1.0 + tol);
    }
    CHECK(s.u() * s.u() + s.v() * s.v() <= 4.0 * s.n0() * s.n1() + tol);
  }
}

/// Independent long-time oracle: null vector of the generator, normalized.
double null_space_p1(const PhysicalParams& p, const ScatteringRates& r) {
  const Generator<double> a = generator(p, r);
  Eigen::FullPivLU<Generator<double>> lu(a);
  const StateVector<double> x = lu.kernel().col(0);
  const double tr = x.tail<4>().sum();
  return 1.0 - x[SystemState::kN0] / tr;
}

}  // namespace

TEST_CASE("derivative is the explicit right-hand side and conserves trace") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    PhysicalParams p;
    p.omega_mw = 10 * u(rng);
    p.delta_mw = u(rng) - 0.5;
    p.gamma3 = 100 + 1000 * u(rng);
    p.gamma_ph_extra = u(rng);
    const auto r = rates_from_values(u(rng), u(rng), p.gamma3);
    SystemState s;
    s.values << u(rng) - 0.5, u(rng) - 0.5, u(rng), u(rng), u(rng), u(rng);
    const auto d = derivative(s, p, r);
    CHECK(std::abs(d[2] + d[3] + d[4] + d[5]) < 1e-12 * (1 + d.cwiseAbs().maxCoeff()));
    CHECK((generator(p, r) * s.values - d).norm() < 1e-12 * (1 + d.norm()));

    const double gc = r.r1 + p.gamma_ph_extra;
    CHECK(d[0] == doctest::Approx(-p.delta_mw * s.v() - gc * s.u()));
    CHECK(d[1] == doctest::Approx(p.delta_mw * s.u() + p.omega_mw * (s.n0() - s.n1()) - gc * s.v()));
    CHECK(d[5] == doctest::Approx(r.r1 * s.n1() + r.r2 * s.n2() - p.gamma3 * s.n3()));
  }
}

TEST_CASE("zero light reproduces the resonant Rabi formula") {
  PhysicalParams p = test::reference_params();
  const ScatteringRates r{};
  const double period = 2 * std::numbers::pi / p.omega_mw;
  const auto times = uniform_grid(period / 40, 400);
  for (auto method : {IntegrationMethod::kRk45, IntegrationMethod::kPropagator, IntegrationMethod::kRk4}) {
    IntegratorConfig cfg = with_method(method);
    cfg.dt = period / 4000;
    // Default rtol 1e-8 leaves ~2.5e-8 of global phase error after ten periods.
    cfg.rtol = 1e-10;
    cfg.atol = 1e-12;
    const auto tr = integrate(SystemState::ground(), p, r, cfg, std::span<const double>(times));
    double worst = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double want = std::pow(std::sin(p.omega_mw * times[i] / 2), 2);
      worst = std::max(worst, std::abs(tr.states[i].n1() - want));
    }
    CHECK(worst < 1e-8);
    check_hygiene(tr);
  }
}

TEST_CASE("pi pulse without light") {
  PhysicalParams p = test::reference_params();
  const std::vector<double> t{std::numbers::pi / p.omega_mw};
  const auto tr = integrate(SystemState::ground(), p, ScatteringRates{}, IntegratorConfig{}, std::span(t));
  CHECK(std::abs(tr.states[0].n1() - 1.0) < 1e-8);
  CHECK(std::abs(tr.states[0].p1() - 1.0) < 1e-8);
}

TEST_CASE("without microwaves level 2 relaxes into the 1-2-3 equilibrium") {
  PhysicalParams p;
  p.omega_mw = 0.0;
  p.gamma3 = 1e4;
  const auto r = rates_from_values(30.0, 70.0, p.gamma3);
  const std::vector<double> t{2.0};
  SystemState s0 = SystemState::populations(0.0, 0.0, 1.0);
  s0.values[SystemState::kN0] = 0.0;
  auto tr = integrate(s0, p, r, IntegratorConfig{}, std::span(t));
  const auto& s = tr.states[0];
  // n1·r₁·β₂ = n2·r₂·β₁ on the subsystem, with n0 frozen and Γ₃n3 = r₁n1 + r₂n2.
  const double n2 = p.beta2 * r.r1 / (p.beta1 * r.r2 + p.beta2 * r.r1);
  CHECK(s.n0() == 0.0);
  CHECK(s.n2() / (s.n1() + s.n2()) == doctest::Approx(n2).epsilon(1e-9));
  CHECK(s.n3() * p.gamma3 == doctest::Approx(r.r1 * s.n1() + r.r2 * s.n2()).epsilon(1e-6));
  CHECK(s.n1() * r.r1 * p.beta2 == doctest::Approx(s.n2() * r.r2 * p.beta1).epsilon(1e-5));

  // A share parked in level 0 stays there.
  s0 = SystemState::populations(0.3, 0.0, 0.7);
  tr = integrate(s0, p, r, IntegratorConfig{}, std::span(t));
  CHECK(tr.states[0].n0() == 0.3);
}

TEST_CASE("long-time limit approaches the saturation level") {
  PhysicalParams p = test::reference_params();
  p.i0 = 5e-5;
  p.alpha = 0.8;
  const auto r = scattering_rates(p);
  const double t_end = 20 * relaxation_time(p, r);
  const std::vector<double> t{t_end};
  for (auto init : {SystemState::ground(), SystemState::populations(0.8, 0.2), SystemState::populations(0, 0, 1)}) {
    const auto tr = integrate(init, p, r, with_method(IntegrationMethod::kPropagator), std::span(t));
    CHECK(std::abs(tr.states[0].p1() - saturation_probability(r)) < 1e-4);
    CHECK(std::abs(tr.states[0].p1() - null_space_p1(p, r)) < 1e-4);
  }
}

TEST_CASE("reference time span: trace, positivity, coherence bound, integrator agreement") {
  PhysicalParams p = test::reference_params();
  for (auto [pi, sigma] : {std::pair{700.0, 700.0}, std::pair{70.0, 7.0}, std::pair{70.0, 350.0}}) {
    const auto r = test::rates_from_rabi(pi, sigma, p);
    const auto times = uniform_grid(10e-6, 400);  // 4 ms
    const auto init = SystemState::populations(0.8, 0.2);
    const auto a = integrate(init, p, r, IntegratorConfig{}, std::span<const double>(times));
    const auto b = integrate(init, p, r, with_method(IntegrationMethod::kPropagator), std::span<const double>(times));
    check_hygiene(a);
    check_hygiene(b);
    double worst = 0;
    for (std::size_t i = 0; i < times.size(); ++i) worst = std::max(worst, std::abs(a.states[i].p1() - b.states[i].p1()));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("stiffness failure when the step budget is exhausted") {
  PhysicalParams p = test::reference_params();
  const auto r = test::rates_from_rabi(700.0, 700.0, p);
  IntegratorConfig cfg;
  cfg.max_steps = 100;
  const std::vector<double> t{1e-3};
  CHECK_THROWS_AS(integrate(SystemState::ground(), p, r, cfg, std::span(t)), StiffnessFailure);
  cfg.rtol = 0;
  CHECK_THROWS_AS(integrate(SystemState::ground(), p, r, cfg, std::span(t)), std::invalid_argument);
}

TEST_CASE("adiabatic reduction") {
  PhysicalParams p = test::reference_params();
  const auto times = uniform_grid(20e-6, 200);
  const auto span = std::span<const double>(times);

  SUBCASE("zero light matches the full model") {
    const auto cfg = with_method(IntegrationMethod::kPropagator);
    const auto a = integrate(SystemState::ground(), p, ScatteringRates{}, cfg, span);
    const auto b = integrate_adiabatic(SystemState::ground(), p, ScatteringRates{}, cfg, span);
    for (std::size_t i = 0; i < times.size(); ++i) CHECK((a.states[i].values - b.states[i].values).norm() < 1e-10);
  }
  SUBCASE("agrees with the full model at reference scale") {
    for (auto [pi, sigma] : {std::pair{700.0, 700.0}, std::pair{700.0, 140.0}, std::pair{70.0, 70.0}}) {
      const auto r = test::rates_from_rabi(pi, sigma, p);
      const auto init = SystemState::populations(0.8, 0.2);
      const auto a = integrate(init, p, r, with_method(IntegrationMethod::kPropagator), span);
      const auto b = integrate_adiabatic(init, p, r, with_method(IntegrationMethod::kPropagator), span);
      for (std::size_t i = 0; i < times.size(); ++i) {
        CHECK(std::abs(a.states[i].p1() - b.states[i].p1()) <= 1e-3 * a.states[i].p1());
      }
    }
  }
  SUBCASE("plateaus") {
    const std::vector<double> t_end{0.2};
    auto r = test::rates_from_rabi(700.0, 700.0, p);
    auto tr = integrate_adiabatic(SystemState::populations(0.8, 0.2), p, r, with_method(IntegrationMethod::kPropagator),
                                  std::span(t_end));
    CHECK(std::abs(tr.states[0].p1() - 2.0 / 3.0) < 1e-3);
    r = rates_from_values(2000.0, 2000.0, p.gamma3);
    tr = integrate_adiabatic(SystemState::ground(), p, r, with_method(IntegrationMethod::kPropagator), std::span(t_end));
    CHECK(std::abs(tr.states[0].p1() - 0.75) < 1e-3);
  }
  SUBCASE("conserves the ground manifold") {
    const auto r = test::rates_from_rabi(700.0, 350.0, p);
    const auto tr = integrate_adiabatic(SystemState::populations(0.8, 0.2), p, r, IntegratorConfig{}, span);
    for (const auto& s : tr.states) CHECK(std::abs(s.n0() + s.n1() + s.n2() - 1.0) < 1e-9);
  }
  SUBCASE("rejects strong light") {
    PhysicalParams q = p;
    q.i0 = 0.5;
    q.delta_laser = 0;
    CHECK_THROWS_AS(integrate_adiabatic(SystemState::ground(), q, scattering_rates(q), IntegratorConfig{}, span),
                    RegimeViolation);
    q.i0 = 0.09;
    CHECK_NOTHROW(integrate_adiabatic(SystemState::ground(), q, scattering_rates(q), IntegratorConfig{}, span));
  }
}

TEST_CASE("effective two-level model") {
  const double omega = from_2pi_khz(4.2);
  const BlochVector<double> ground(-1.0, 0.0, 0.0);
  const std::vector<double> t_end{1.0};
  const auto cfg = with_method(IntegrationMethod::kPropagator);

  auto p1 = integrate_effective_two_level(ground, 200.0, 0.0, omega, cfg, std::span(t_end));
  CHECK(p1[0] == doctest::Approx(0.5).epsilon(1e-9));

  // I = Ω²/(Γγ) = 1.
  const double gamma = omega, Gamma = omega;
  p1 = integrate_effective_two_level(ground, gamma, Gamma, omega, cfg, std::span(t_end));
  CHECK(p1[0] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(effective_two_level_plateau(gamma, Gamma, omega) == doctest::Approx(0.75).epsilon(1e-15));

  CHECK_THROWS_AS(integrate_effective_two_level(ground, 1.0, 3.0, omega, cfg, std::span(t_end)),
                  std::invalid_argument);
}

TEST_CASE("effective two-level rates reproduce the four-level plateau on the strong-pi family") {
  PhysicalParams p = test::reference_params();
  const std::vector<double> t_end{0.5};
  for (double sigma : {70.0, 140.0, 350.0, 700.0}) {
    const auto r = test::rates_from_rabi(700.0, sigma, p);
    const auto eff = effective_rates(p, r);
    const auto four = integrate(SystemState::populations(0.8, 0.2), p, r, with_method(IntegrationMethod::kPropagator),
                                std::span(t_end));
    const auto two = integrate_effective_two_level(BlochVector<double>(-0.6, 0, 0), eff.gamma_eff, eff.longitudinal(),
                                                   p.omega_mw, with_method(IntegrationMethod::kPropagator),
                                                   std::span(t_end));
    CHECK(std::abs(two[0] - four.states[0].p1()) < 1e-2);
  }
}

TEST_CASE("nutation envelope of the four-level model") {
  // Weak pumping (√(2r₁γ_l) = 70, √(r₂γ_l) = 7): weak damping. The decaying oscillation is the
  // complex eigenpair of the generator; its real part is the envelope rate.
  PhysicalParams p = test::reference_params();
  const auto r = test::rates_from_rabi(70.0, 7.0, p);
  Eigen::EigenSolver<Generator<double>> es(generator(p, r));
  double lambda = 0, freq = 0;
  for (int i = 0; i < 6; ++i) {
    if (es.eigenvalues()[i].imag() > 0) {
      lambda = -es.eigenvalues()[i].real();
      freq = es.eigenvalues()[i].imag();
    }
  }
  // Coherence decays at r₁, the population difference at β₂r₁/2 on average.
  CHECK(test::rel_err(lambda, (r.r1 + p.beta2 * r.r1 / 2) / 2) < 0.02);

  // Frequency pulling of the nutation stays below the weak-damping bound.
  const double gc = coherence_decay_rate(p, r);
  CHECK(std::abs(freq - p.omega_mw) < gc * gc / (2 * p.omega_mw));

  // The slow pumping drift (eigenvalue near −r₁/3) is outside the damped-cosine
  // model, so a fit only locates the nutation roughly here.
  const auto times = uniform_grid(20e-6, 500);
  const auto tr = integrate(SystemState::populations(0.8, 0.2), p, r, with_method(IntegrationMethod::kPropagator),
                            std::span<const double>(times));
  const auto fit = fit_nutation(CurveSamples{times, tr.p1(), {}});
  CHECK(fit.converged);
  CHECK(test::rel_err(fit.omega, p.omega_mw) < 0.05);
}

TEST_CASE("fit locates the nutation when a slow drift dominates the record") {
  // The nutation dies within a few ms of a record long enough for the pumping
  // drift to settle; the drift residual then outranks the nutation line.
  PhysicalParams p = test::reference_params();
  p.i0 = 1e-5;
  p.alpha = std::numbers::pi / 6;
  const auto r = scattering_rates(p);
  const double span = 10.0 / std::min(r.r1 * p.beta2, r.r2 * p.beta1);
  const int n = static_cast<int>(std::ceil(span * 10 * p.omega_mw / (2 * std::numbers::pi)));
  const auto times = uniform_grid(span / n, n);
  const auto tr = integrate(SystemState::ground(), p, r, with_method(IntegrationMethod::kPropagator),
                            std::span<const double>(times));
  const auto fit = fit_nutation(CurveSamples{times, tr.p1(), {}});
  CHECK(fit.converged);
  CHECK(test::rel_err(fit.omega, p.omega_mw) < 0.05);
  CHECK(fit.lambda > 0.0);
}

TEST_CASE("steady-state oracle over random weak-field draws") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    PhysicalParams p = test::reference_params();
    p.i0 = std::pow(10.0, -5.0 + 2.0 * u(rng));
    p.alpha = 0.1 + 1.3 * u(rng);
    p.zeeman_delta = from_2pi_khz(-2.0 + 4.0 * u(rng));
    const auto r = scattering_rates(p);
    const double rule = 10.0 / std::min(r.r1 * p.beta2, r.r2 * p.beta1);
    const std::vector<double> t{std::max(rule, 10.0 * relaxation_time(p, r))};
    const auto tr = integrate(SystemState::ground(), p, r, with_method(IntegrationMethod::kPropagator), std::span(t));
    CHECK(std::abs(tr.states[0].p1() - saturation_probability(r)) < 1e-3);
    check_hygiene(tr);
  }
}

TEST_CASE("half-weight Rayleigh dephasing variant") {
  PhysicalParams p = test::reference_params();
  const auto r = rates_from_values(900.0, 300.0, p.gamma3);
  CHECK(coherence_decay_rate(p, r) == doctest::Approx(900.0));
  CHECK(coherence_decay_rate(p, r, DephasingModel::kHalfWeightRayleigh) == doctest::Approx(900.0 * (2.0 / 3 + 1.0 / 6)));
}

TEST_CASE("uniform grid") {
  const auto g = uniform_grid(0.1, 3);
  REQUIRE(g.size() == 4);
  CHECK(g[3] == 3 * 0.1);
  CHECK(uniform_grid(0.1, 3, false).size() == 3);
}
