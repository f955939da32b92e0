#pragma once

// Time-domain models of the driven qubit under weak resonance light:
//  - the four-level hybrid model: coherent microwave dynamics on 0-1,
//    rate-equation optical pumping among 1, 2, 3;
//  - its adiabatic reduction with level 3 slaved to the ground levels;
//  - the effective two-level Bloch model with rates (γ, Γ) relaxing into 1.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lidec/core_model.hpp"
#include "lidec/errors.hpp"
#include "lidec/ode.hpp"

namespace lidec {

template <typename Scalar>
using StateVector = Eigen::Matrix<Scalar, 6, 1>;

template <typename Scalar>
using Generator = Eigen::Matrix<Scalar, 6, 6>;

/// u, v: in-phase and quadrature parts of the 0-1 coherence (u = 2Re ρ₀₁,
/// v = 2Im ρ₀₁ in the microwave frame); n0..n3: level populations.
template <typename Scalar>
struct BasicSystemState {
  enum Index : Eigen::Index { kU = 0, kV, kN0, kN1, kN2, kN3 };

  StateVector<Scalar> values = StateVector<Scalar>::Zero();

  static BasicSystemState populations(Scalar n0, Scalar n1, Scalar n2 = Scalar(0), Scalar n3 = Scalar(0)) {
    BasicSystemState s;
    s.values << Scalar(0), Scalar(0), n0, n1, n2, n3;
    return s;
  }

  /// Ideal preparation: all population in F=0.
  static BasicSystemState ground() { return populations(Scalar(1), Scalar(0)); }

  Scalar u() const { return values[kU]; }
  Scalar v() const { return values[kV]; }
  Scalar n0() const { return values[kN0]; }
  Scalar n1() const { return values[kN1]; }
  Scalar n2() const { return values[kN2]; }
  Scalar n3() const { return values[kN3]; }

  Scalar trace() const { return n0() + n1() + n2() + n3(); }

  /// Probability that the probe finds F=1. Level 3 decays only into F=1, so
  /// everything outside level 0 counts.
  Scalar p1() const { return Scalar(1) - n0(); }
};

using SystemState = BasicSystemState<double>;

enum class IntegrationMethod {
  kRk4,         // fixed step
  kRk45,        // adaptive Dormand-Prince
  kPropagator,  // exact matrix exponential of the (linear) generator
};

struct IntegratorConfig {
  IntegrationMethod method = IntegrationMethod::kRk45;
  double dt = 1e-9;  // rk4 step, seconds
  double rtol = 1e-8;
  double atol = 1e-10;
  long max_steps = 50'000'000;

  void validate() const {
    if (!(dt > 0)) throw std::invalid_argument("integrator dt must be positive");
    if (!(rtol > 0) || !(atol > 0)) throw std::invalid_argument("integrator tolerances must be positive");
    if (max_steps < 1) throw std::invalid_argument("integrator max_steps must be positive");
  }

  bool operator==(const IntegratorConfig&) const = default;
};

/// How scattering out of state 1 is charged against the 0-1 coherence.
enum class DephasingModel {
  kFull,                // every scattering event out of 1 dephases: γ_c = r₁ + γ_ph
  kHalfWeightRayleigh,  // elastic returns to 1 count half: γ_c = (β₂ + β₁/2) r₁ + γ_ph
};

template <typename Scalar>
struct BasicTrajectory {
  std::vector<Scalar> times;
  std::vector<BasicSystemState<Scalar>> states;

  std::vector<Scalar> p1() const {
    std::vector<Scalar> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(s.p1());
    return out;
  }
};

using Trajectory = BasicTrajectory<double>;

/// Total decay rate of the 0-1 coherence.
template <typename Scalar>
Scalar coherence_decay_rate(const BasicPhysicalParams<Scalar>& p, const BasicScatteringRates<Scalar>& rates,
                            DephasingModel model = DephasingModel::kFull) {
  const Scalar weight = model == DephasingModel::kFull ? Scalar(1) : p.beta2 + p.beta1 / Scalar(2);
  return weight * rates.r1 + p.gamma_ph_extra;
}

/// Matrix A of the linear four-level system ẋ = A·x.
template <typename Scalar>
Generator<Scalar> generator(const BasicPhysicalParams<Scalar>& p, const BasicScatteringRates<Scalar>& rates,
                            DephasingModel model = DephasingModel::kFull) {
  using S = BasicSystemState<Scalar>;
  const Scalar gc = coherence_decay_rate(p, rates, model);
  const Scalar om = p.omega_mw;
  const Scalar half_om = om / Scalar(2);
  Generator<Scalar> a = Generator<Scalar>::Zero();
  a(S::kU, S::kU) = -gc;
  a(S::kU, S::kV) = -p.delta_mw;
  a(S::kV, S::kU) = p.delta_mw;
  a(S::kV, S::kV) = -gc;
  a(S::kV, S::kN0) = om;
  a(S::kV, S::kN1) = -om;
  a(S::kN0, S::kV) = -half_om;
  a(S::kN1, S::kV) = half_om;
  a(S::kN1, S::kN1) = -rates.r1;
  a(S::kN1, S::kN3) = p.beta1 * p.gamma3;
  a(S::kN2, S::kN2) = -rates.r2;
  a(S::kN2, S::kN3) = p.beta2 * p.gamma3;
  a(S::kN3, S::kN1) = rates.r1;
  a(S::kN3, S::kN2) = rates.r2;
  a(S::kN3, S::kN3) = -p.gamma3;
  return a;
}

/// Right-hand side of the four-level equations of motion:
///   u̇  = −Δ v − γ_c u
///   v̇  =  Δ u + Ω (n0 − n1) − γ_c v
///   ṅ0 = −(Ω/2) v
///   ṅ1 =  (Ω/2) v − r₁ n1 + β₁ Γ₃ n3
///   ṅ2 = −r₂ n2 + β₂ Γ₃ n3
///   ṅ3 =  r₁ n1 + r₂ n2 − Γ₃ n3
template <typename Scalar>
StateVector<Scalar> derivative(const BasicSystemState<Scalar>& s, const BasicPhysicalParams<Scalar>& p,
                               const BasicScatteringRates<Scalar>& rates,
                               DephasingModel model = DephasingModel::kFull) {
  const Scalar gc = coherence_decay_rate(p, rates, model);
  const Scalar om = p.omega_mw;
  StateVector<Scalar> d;
  d[0] = -p.delta_mw * s.v() - gc * s.u();
  d[1] = p.delta_mw * s.u() + om * (s.n0() - s.n1()) - gc * s.v();
  d[2] = -om / Scalar(2) * s.v();
  d[3] = om / Scalar(2) * s.v() - rates.r1 * s.n1() + p.beta1 * p.gamma3 * s.n3();
  d[4] = -rates.r2 * s.n2() + p.beta2 * p.gamma3 * s.n3();
  d[5] = rates.r1 * s.n1() + rates.r2 * s.n2() - p.gamma3 * s.n3();
  return d;
}

namespace detail {

/// `conserved` is a functional c with cᵀA = 0 (total population); only the
/// propagator needs it spelled out.
template <typename Scalar, int N, typename Emit>
void run_linear(const Eigen::Matrix<Scalar, N, N>& a, const Eigen::Matrix<Scalar, N, 1>& x0, Scalar t0,
                std::span<const Scalar> times, const IntegratorConfig& config,
                const Eigen::Matrix<Scalar, 1, N>& conserved, Emit&& emit) {
  using Vector = Eigen::Matrix<Scalar, N, 1>;
  config.validate();
  const auto rhs = [&a](const Vector& x) -> Vector { return a * x; };
  switch (config.method) {
    case IntegrationMethod::kRk4:
      ode::rk4(rhs, x0, t0, times, Scalar(config.dt), emit);
      break;
    case IntegrationMethod::kRk45: {
      ode::AdaptiveOptions opts;
      opts.rtol = config.rtol;
      opts.atol = config.atol;
      opts.max_steps = config.max_steps;
      ode::dormand_prince(rhs, x0, t0, times, opts, emit);
      break;
    }
    case IntegrationMethod::kPropagator:
      ode::linear_propagator(a, x0, t0, times, emit, &conserved);
      break;
  }
}

}  // namespace detail

/// Integrates the four-level model from t = 0 and samples it at `times`.
template <typename Scalar>
BasicTrajectory<Scalar> integrate(const BasicSystemState<Scalar>& initial, const BasicPhysicalParams<Scalar>& p,
                                  const BasicScatteringRates<Scalar>& rates, const IntegratorConfig& config,
                                  std::span<const Scalar> times, DephasingModel model = DephasingModel::kFull) {
  BasicTrajectory<Scalar> out;
  out.times.assign(times.begin(), times.end());
  out.states.resize(times.size());
  const Generator<Scalar> a = generator(p, rates, model);
  const Eigen::Matrix<Scalar, 1, 6> total(0, 0, 1, 1, 1, 1);
  detail::run_linear<Scalar, 6>(a, initial.values, Scalar(0), times, config, total,
                                [&out](std::size_t i, const StateVector<Scalar>& x) { out.states[i].values = x; });
  return out;
}

/// Largest I(m)·L(B, m) implied by the rates' excited populations.
template <typename Scalar>
Scalar max_saturation_parameter(const BasicScatteringRates<Scalar>& rates) {
  Scalar worst = Scalar(0);
  for (const Scalar& p3 : rates.p3_mean) {
    if (p3 >= Scalar(0.5)) return std::numeric_limits<Scalar>::infinity();
    worst = std::max(worst, Scalar(2) * p3 / (Scalar(1) - Scalar(2) * p3));
  }
  return worst;
}

/// Four-level dynamics with level 3 eliminated (ṅ3 = 0). The reduced system
/// conserves n0 + n1 + n2; the reported n3 = (r₁n1 + r₂n2)/Γ₃ is the slaved
/// value and lies outside that normalization.
template <typename Scalar>
BasicTrajectory<Scalar> integrate_adiabatic(const BasicSystemState<Scalar>& initial,
                                            const BasicPhysicalParams<Scalar>& p,
                                            const BasicScatteringRates<Scalar>& rates,
                                            const IntegratorConfig& config, std::span<const Scalar> times,
                                            DephasingModel model = DephasingModel::kFull) {
  const Scalar x = max_saturation_parameter(rates);
  if (x > Scalar(0.1)) {
    throw RegimeViolation("adiabatic elimination needs I(m)L <= 0.1, got " + std::to_string(static_cast<double>(x)));
  }
  using Vector5 = Eigen::Matrix<Scalar, 5, 1>;
  using Matrix5 = Eigen::Matrix<Scalar, 5, 5>;
  const Generator<Scalar> full = generator(p, rates, model);
  Matrix5 a = full.template topLeftCorner<5, 5>();
  // Feed Γ₃n3 = r₁n1 + r₂n2 back into the n1 and n2 rows.
  a(3, 3) += p.beta1 * rates.r1;
  a(3, 4) += p.beta1 * rates.r2;
  a(4, 3) += p.beta2 * rates.r1;
  a(4, 4) += p.beta2 * rates.r2;

  // Population sitting in level 3 at t = 0 is handed to levels 1 and 2 at once.
  Vector5 x0 = initial.values.template head<5>();
  x0[3] += p.beta1 * initial.n3();
  x0[4] += p.beta2 * initial.n3();

  BasicTrajectory<Scalar> out;
  out.times.assign(times.begin(), times.end());
  out.states.resize(times.size());
  const Eigen::Matrix<Scalar, 1, 5> total(0, 0, 1, 1, 1);
  detail::run_linear<Scalar, 5>(a, x0, Scalar(0), times, config, total, [&](std::size_t i, const Vector5& y) {
    auto& s = out.states[i].values;
    s.template head<5>() = y;
    s[5] = (rates.r1 * y[3] + rates.r2 * y[4]) / p.gamma3;
  });
  return out;
}

/// Effective two-level Bloch vector (w, u, v) with w = n1 − n0.
template <typename Scalar>
using BlochVector = Eigen::Matrix<Scalar, 3, 1>;

/// Resonantly driven two-level system with transverse rate γ and longitudinal
/// rate Γ whose fixed point is the upper state 1:
///   ẇ = Ω v − Γ (w − 1),  u̇ = −γ u,  v̇ = −Ω w − γ v.
/// Returns P₁ = (1 + w)/2 at each sample time.
template <typename Scalar>
std::vector<Scalar> integrate_effective_two_level(const BlochVector<Scalar>& initial, Scalar gamma_eff,
                                                  Scalar Gamma_eff, Scalar omega_mw, const IntegratorConfig& config,
                                                  std::span<const Scalar> times) {
  if (gamma_eff < Scalar(0) || Gamma_eff < Scalar(0)) throw std::invalid_argument("relaxation rates must be non-negative");
  if (gamma_eff < Gamma_eff / Scalar(2)) throw std::invalid_argument("unphysical rates: gamma < Gamma/2");
  // Homogeneous form in y = (w, u, v, 1).
  using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
  using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
  Matrix4 a = Matrix4::Zero();
  a(0, 0) = -Gamma_eff;
  a(0, 2) = omega_mw;
  a(0, 3) = Gamma_eff;
  a(1, 1) = -gamma_eff;
  a(2, 0) = -omega_mw;
  a(2, 2) = -gamma_eff;
  Vector4 y0;
  y0 << initial[0], initial[1], initial[2], Scalar(1);

  std::vector<Scalar> p1(times.size());
  // The homogeneous coordinate is the conserved quantity here.
  const Eigen::Matrix<Scalar, 1, 4> unit(0, 0, 0, 1);
  detail::run_linear<Scalar, 4>(a, y0, Scalar(0), times, config, unit,
                                [&p1](std::size_t i, const Vector4& y) { p1[i] = (Scalar(1) + y[0]) / Scalar(2); });
  return p1;
}

/// Closed-form long-time P₁ of the effective two-level model, 1 − ½·I/(1+I)
/// with I = Ω²/(Γγ).
template <typename Scalar>
Scalar effective_two_level_plateau(Scalar gamma_eff, Scalar Gamma_eff, Scalar omega_mw) {
  if (!(Gamma_eff > Scalar(0)) || !(gamma_eff > Scalar(0))) return Scalar(0.5);
  const Scalar sat = omega_mw * omega_mw / (Gamma_eff * gamma_eff);
  return Scalar(1) - sat / (Scalar(2) * (Scalar(1) + sat));
}

/// Uniform grid 0, dt, 2dt, ..., n·dt (n + 1 points) computed as k·dt.
template <typename Scalar>
std::vector<Scalar> uniform_grid(Scalar dt, int n, bool include_zero = true) {
  std::vector<Scalar> t;
  t.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = include_zero ? 0 : 1; k <= n; ++k) t.push_back(Scalar(k) * dt);
  return t;
}

/// Rough time for the light-on dynamics to reach the flow equilibrium: the
/// slowest of pumping between {0,1} and 2, dephasing of the nutation, and the
/// drive-limited (Zeno) transfer 0 → 1 when γ_c ≫ Ω.
template <typename Scalar>
Scalar relaxation_time(const BasicPhysicalParams<Scalar>& p, const BasicScatteringRates<Scalar>& rates) {
  const Scalar gc = coherence_decay_rate(p, rates);
  const Scalar pumping = p.beta2 * rates.r1 / Scalar(2) + p.beta1 * rates.r2;
  Scalar slowest = std::min(pumping, gc / Scalar(2));
  if (gc > Scalar(0)) slowest = std::min(slowest, p.omega_mw * p.omega_mw / gc);
  return slowest > Scalar(0) ? Scalar(1) / slowest : std::numeric_limits<Scalar>::infinity();
}

}  // namespace lidec
