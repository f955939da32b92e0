#pragma once

#include <numbers>
#include <vector>

#include "lidec/core_model.hpp"

namespace lidec {

/// P₁(τ) samples; sigma is optional (empty means unit weights).
struct CurveSamples {
  std::vector<double> tau;
  std::vector<double> p1;
  std::vector<double> sigma;
};

/// Best fit of P₁(τ) = p_inf + A·e^(−λτ)·cos(Ωτ + φ).
struct NutationFit {
  double omega = 0.0;
  double lambda = 0.0;
  double p_inf = 0.0;
  double amplitude = 0.0;
  double phase = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
  bool low_confidence = false;  // oscillation amplitude comparable to the residual
  int iterations = 0;
  std::vector<double> cost_history;  // weighted cost after each accepted step
};

struct FitOptions {
  int max_iterations = 200;
  double cost_tolerance = 1e-13;  // relative cost decrease that counts as converged
  double step_tolerance = 1e-11;  // relative parameter change that counts as converged
};

/// Weighted nonlinear least squares of a damped cosine with a constant
/// plateau. Throws OscillationUnresolved for fewer than 8 samples, a span
/// shorter than one fitted period, or an overdamped curve (λ ≥ Ω).
NutationFit fit_nutation(const CurveSamples& curve, const FitOptions& options = {});

/// Evaluates the fitted model at τ.
double nutation_model(const NutationFit& fit, double tau);

/// r₂/r₁ from the saturation plateau, 2(1 − p)/(2p − 1). Throws OutOfRange
/// unless p ∈ (½, 1].
double invert_saturation(double p_inf);

/// Maps a converged fit to (γ, Γ): γ = λ, r₂/r₁ from the plateau, Γ = Ω²/r₂
/// with r₁ = γ.
EffectiveRates effective_from_fit(const NutationFit& fit, double omega_mw);

struct DesignTarget {
  double gamma_target = 0.0;  // rad/s
  double Gamma_target = 0.0;  // rad/s
  double omega_mw = 0.0;
  double delta_laser = 0.0;
  double i0_min = 0.0;
  double i0_max = 1.0;
  double alpha_min = 0.0;
  double alpha_max = std::numbers::pi / 2;
  double zeeman_min = 0.0;
  double zeeman_max = 0.0;
  bool free_zeeman = false;  // when set, B is chosen in its bounds to minimize I₀
};

struct DesignResult {
  double i0 = 0.0;
  double alpha = 0.0;
  double zeeman_delta = 0.0;
  PhysicalParams params;  // template with the solved knobs filled in
  EffectiveRates achieved;
  int newton_steps = 0;
};

/// Chooses light intensity and polarization (and optionally B) so that the
/// forward model produces the target (γ, Γ). The template supplies Γ₃, γ_ph,
/// the branching ratios and, unless free_zeeman, the Zeeman splitting.
/// Throws Infeasible naming the binding constraint.
DesignResult design_decoherence(const DesignTarget& target, const PhysicalParams& params_template);

}  // namespace lidec
