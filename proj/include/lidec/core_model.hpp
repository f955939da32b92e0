#pragma once

// Closed-form scattering and relaxation formulas for a microwave-driven
// hyperfine qubit exposed to weak resonance light.
//
// Level indices: 0 = S1/2 F=0, 1 = F=1 m=0, 2 = F=1 m=±1 (combined),
// 3 = P1/2 resonance level. All frequencies and rates are angular (rad/s).

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

#include "lidec/errors.hpp"

namespace lidec {

template <typename Scalar>
struct BasicPhysicalParams {
  Scalar omega_mw{0};        // microwave Rabi frequency Ω
  Scalar delta_mw{0};        // microwave detuning from the 0-1 resonance
  Scalar i0{0};              // saturation-normalized light flux at the ion
  Scalar alpha{0};           // angle between light polarization and B
  Scalar delta_laser{0};     // ω − ω₀, negative means red detuned
  Scalar zeeman_delta{0};    // g_F μ_B B / ħ with g_F = 1
  Scalar gamma3{1};          // energy relaxation of the resonance level
  Scalar gamma_lph{0};       // extra optical dipole dephasing
  Scalar gamma_ph_extra{0};  // non-optical dephasing of the 0-1 coherence
  Scalar beta1{Scalar(1) / Scalar(3)};
  Scalar beta2{Scalar(2) / Scalar(3)};

  /// Phase relaxation of the laser-excited dipole, Γ₃/2 + γ_lph.
  Scalar optical_dephasing() const { return gamma3 / Scalar(2) + gamma_lph; }

  bool operator==(const BasicPhysicalParams&) const = default;
};

using PhysicalParams = BasicPhysicalParams<double>;

/// Folds an angle onto [0, π/2]; only sin²α and cos²α are observable.
template <typename Scalar>
Scalar normalize_polarization_angle(Scalar alpha) {
  using std::abs;
  using std::fmod;
  const Scalar pi = std::numbers::pi_v<Scalar>;
  Scalar a = fmod(abs(alpha), pi);
  if (a > pi / Scalar(2)) a = pi - a;
  return a;
}

/// Returns a copy with α folded onto [0, π/2]; throws std::invalid_argument on
/// a broken invariant.
template <typename Scalar>
BasicPhysicalParams<Scalar> validated(BasicPhysicalParams<Scalar> p) {
  using std::abs;
  using std::isfinite;
  const std::array<Scalar, 11> all{p.omega_mw, p.delta_mw,  p.i0,        p.alpha,
                                   p.delta_laser, p.zeeman_delta, p.gamma3, p.gamma_lph,
                                   p.gamma_ph_extra, p.beta1, p.beta2};
  for (const Scalar& v : all) {
    if (!isfinite(v)) throw std::invalid_argument("physical parameters must be finite");
  }
  if (!(p.gamma3 > Scalar(0))) throw std::invalid_argument("gamma3 must be positive");
  if (p.i0 < Scalar(0)) throw std::invalid_argument("i0 must be non-negative");
  if (p.gamma_lph < Scalar(0) || p.gamma_ph_extra < Scalar(0)) {
    throw std::invalid_argument("dephasing rates must be non-negative");
  }
  if (p.beta1 < Scalar(0) || p.beta1 > Scalar(1) || p.beta2 < Scalar(0) || p.beta2 > Scalar(1) ||
      abs(p.beta1 + p.beta2 - Scalar(1)) > Scalar(1e-12)) {
    throw std::invalid_argument("branching ratios must lie in [0,1] and sum to 1");
  }
  p.alpha = normalize_polarization_angle(p.alpha);
  return p;
}

template <typename Scalar>
struct BasicScatteringRates {
  Scalar r1{0};  // scattering out of state 1
  Scalar r2{0};  // scattering out of state 2, both Zeeman components
  std::array<Scalar, 3> p3_mean{};  // ⟨P₃(m)⟩ indexed by m + 1

  Scalar excited_population(int m) const { return p3_mean.at(static_cast<std::size_t>(m + 1)); }

  bool operator==(const BasicScatteringRates&) const = default;
};

using ScatteringRates = BasicScatteringRates<double>;

/// Builds rates from given r₁, r₂ (e.g. quoted values) instead of from light
/// parameters. The excited populations are back-filled from r = ⟨P₃⟩Γ₃ with
/// r₂ split evenly between m = ±1.
template <typename Scalar>
BasicScatteringRates<Scalar> rates_from_values(Scalar r1, Scalar r2, Scalar gamma3) {
  if (r1 < Scalar(0) || r2 < Scalar(0)) throw std::invalid_argument("rates must be non-negative");
  if (!(gamma3 > Scalar(0))) throw std::invalid_argument("gamma3 must be positive");
  BasicScatteringRates<Scalar> rates;
  rates.r1 = r1;
  rates.r2 = r2;
  rates.p3_mean = {r2 / (Scalar(2) * gamma3), r1 / gamma3, r2 / (Scalar(2) * gamma3)};
  return rates;
}

template <typename Scalar>
struct BasicEffectiveRates {
  Scalar gamma_eff{0};
  std::optional<Scalar> Gamma_eff;  // absent when r₂ = 0 (no energy channel)
  std::optional<Scalar> p1_inf;     // absent when r₁ = 0 (no flow equilibrium)

  Scalar longitudinal() const {
    if (!Gamma_eff) throw DegenerateRates("r2 = 0: no energy-relaxation channel, T1 is infinite");
    return *Gamma_eff;
  }

  Scalar saturation() const {
    if (!p1_inf) throw DegenerateRates("r1 = 0: no flow equilibrium");
    return *p1_inf;
  }
};

using EffectiveRates = BasicEffectiveRates<double>;

template <typename Scalar>
struct BasicFlowEquilibrium {
  Scalar n0{0};
  Scalar n1{0};
  Scalar n2{0};
};

using FlowEquilibrium = BasicFlowEquilibrium<double>;

namespace detail {

inline void check_zeeman_component(int m) {
  if (m < -1 || m > 1) throw std::invalid_argument("Zeeman component m must be -1, 0 or +1");
}

}  // namespace detail

/// Excitation line shape L(B, m) of the m-th Zeeman component. The offset from
/// resonance is ω₀ − ω + mδ with delta_laser = ω − ω₀.
template <typename Scalar>
Scalar lorentzian(const BasicPhysicalParams<Scalar>& p, int m) {
  detail::check_zeeman_component(m);
  const Scalar half_width = p.gamma3 / Scalar(2);
  const Scalar offset = -p.delta_laser + Scalar(m) * p.zeeman_delta;
  return half_width * half_width / (half_width * half_width + offset * offset);
}

/// I(m): I₀cos²α drives the π component, I₀sin²α each σ component.
template <typename Scalar>
Scalar light_intensity(const BasicPhysicalParams<Scalar>& p, int m) {
  using std::cos;
  using std::sin;
  detail::check_zeeman_component(m);
  const Scalar c = cos(p.alpha);
  const Scalar s = sin(p.alpha);
  return m == 0 ? p.i0 * c * c : p.i0 * s * s;
}

/// Mean population of level 3 under excitation from Zeeman component m.
template <typename Scalar>
Scalar excited_population(const BasicPhysicalParams<Scalar>& p, int m) {
  const Scalar x = light_intensity(p, m) * lorentzian(p, m);
  return x / (Scalar(2) * (Scalar(1) + x));
}

template <typename Scalar>
BasicScatteringRates<Scalar> scattering_rates(const BasicPhysicalParams<Scalar>& p) {
  BasicScatteringRates<Scalar> rates;
  for (int m = -1; m <= 1; ++m) {
    rates.p3_mean[static_cast<std::size_t>(m + 1)] = excited_population(p, m);
  }
  rates.r1 = rates.p3_mean[1] * p.gamma3;
  rates.r2 = (rates.p3_mean[0] + rates.p3_mean[2]) * p.gamma3;
  return rates;
}

/// Flow equilibrium of optical pumping among levels 0, 1, 2 once the microwave
/// line has dephased (n0 = n1). Branching defaults to 1/3 : 2/3.
template <typename Scalar>
BasicFlowEquilibrium<Scalar> steady_state(const BasicScatteringRates<Scalar>& rates,
                                          Scalar beta1 = Scalar(1) / Scalar(3),
                                          Scalar beta2 = Scalar(2) / Scalar(3)) {
  if (!(rates.r1 + rates.r2 > Scalar(0))) {
    throw DegenerateRates("r1 = r2 = 0: no flow equilibrium exists");
  }
  // β₁ n₂ r₂ = β₂ n₁ r₁ with n₁ = (1 − n₂)/2.
  BasicFlowEquilibrium<Scalar> eq;
  eq.n2 = beta2 * rates.r1 / (Scalar(2) * beta1 * rates.r2 + beta2 * rates.r1);
  eq.n0 = (Scalar(1) - eq.n2) / Scalar(2);
  eq.n1 = eq.n0;
  return eq;
}

/// P₁ plateau as a function of the pumping ratio k = r₂/r₁ (default branching).
/// The two branches keep the final rounding at half an ulp for k → 0 and k → ∞.
template <typename Scalar>
Scalar saturation_from_ratio(Scalar k) {
  if (k < Scalar(0)) throw std::invalid_argument("rate ratio must be non-negative");
  if (k <= Scalar(1)) return Scalar(1) - k / (Scalar(2) * (Scalar(1) + k));
  return Scalar(0.5) + Scalar(1) / (Scalar(2) * (Scalar(1) + k));
}

/// Probability of finding the ion in F=1 once optical pumping has equilibrated.
template <typename Scalar>
Scalar saturation_probability(const BasicScatteringRates<Scalar>& rates,
                              Scalar beta1 = Scalar(1) / Scalar(3),
                              Scalar beta2 = Scalar(2) / Scalar(3)) {
  if (!(rates.r1 > Scalar(0))) throw DegenerateRates("r1 = 0: saturation level undefined");
  if (!(beta2 > Scalar(0))) throw DegenerateRates("beta2 = 0: level 2 is never populated");
  // General branching rescales the ratio; with 1/3 : 2/3 it is r₂/r₁.
  const Scalar k = Scalar(2) * beta1 * rates.r2 / (beta2 * rates.r1);
  return saturation_from_ratio(k);
}

/// Two-level abstraction: γ = r₁ + γ_ph, Γ = Ω²/r₂ and the saturation plateau.
///
/// The energy-relaxation identification is printed as Γ ≙ Ω/r₂, which is
/// dimensionless; equating 1 − P₁ with ½·I/(1+I), I = Ω²/(Γγ), and γ = r₁
/// gives Γ = Ω²/r₂, which is what is implemented.
template <typename Scalar>
BasicEffectiveRates<Scalar> effective_rates(const BasicPhysicalParams<Scalar>& p,
                                            const BasicScatteringRates<Scalar>& rates) {
  BasicEffectiveRates<Scalar> eff;
  eff.gamma_eff = rates.r1 + p.gamma_ph_extra;
  if (rates.r2 > Scalar(0)) eff.Gamma_eff = p.omega_mw * p.omega_mw / rates.r2;
  if (rates.r1 > Scalar(0)) eff.p1_inf = saturation_probability(rates, p.beta1, p.beta2);
  return eff;
}

}  // namespace lidec
