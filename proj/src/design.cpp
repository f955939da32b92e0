#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "lidec/errors.hpp"
#include "lidec/estimation.hpp"

namespace lidec {

namespace {

// Scattering rate produced by intensity x on a component with line shape l.
double component_rate(double gamma3, double x, double l) {
  const double s = x * l;
  return 0.5 * gamma3 * s / (1.0 + s);
}

double component_rate_slope(double gamma3, double x, double l) {
  const double s = x * l;
  return 0.5 * gamma3 * l / ((1.0 + s) * (1.0 + s));
}

struct KnobSolve {
  double pi_intensity = 0.0;     // I₀cos²α
  double sigma_intensity = 0.0;  // I₀sin²α
  int newton_steps = 0;
};

// Weak-field start, then damped Newton on the saturating formulas. The two
// unknowns decouple: r₁ depends on I₀cos²α only, r₂ on I₀sin²α only.
KnobSolve solve_intensities(const PhysicalParams& p, double r1, double r2) {
  const double l0 = lorentzian(p, 0);
  const double lp = lorentzian(p, +1);
  const double lm = lorentzian(p, -1);
  KnobSolve ks;
  ks.pi_intensity = 2.0 * r1 / (l0 * p.gamma3);
  ks.sigma_intensity = 2.0 * r2 / ((lp + lm) * p.gamma3);

  const auto f_pi = [&](double c) { return component_rate(p.gamma3, c, l0) - r1; };
  const auto f_sigma = [&](double s) {
    return component_rate(p.gamma3, s, lp) + component_rate(p.gamma3, s, lm) - r2;
  };
  for (int step = 0; step < 20; ++step) {
    const double e_pi = f_pi(ks.pi_intensity);
    const double e_sigma = f_sigma(ks.sigma_intensity);
    if (std::abs(e_pi) <= 1e-14 * r1 && std::abs(e_sigma) <= 1e-14 * r2) break;
    ++ks.newton_steps;
    const double d_pi = e_pi / component_rate_slope(p.gamma3, ks.pi_intensity, l0);
    const double d_sigma = e_sigma / (component_rate_slope(p.gamma3, ks.sigma_intensity, lp) +
                                      component_rate_slope(p.gamma3, ks.sigma_intensity, lm));
    // Halve until the residual shrinks and the intensity stays positive.
    for (double damp = 1.0; damp > 1e-6; damp /= 2.0) {
      const double c = ks.pi_intensity - damp * d_pi;
      if (c > 0.0 && std::abs(f_pi(c)) < std::abs(e_pi)) {
        ks.pi_intensity = c;
        break;
      }
    }
    for (double damp = 1.0; damp > 1e-6; damp /= 2.0) {
      const double s = ks.sigma_intensity - damp * d_sigma;
      if (s > 0.0 && std::abs(f_sigma(s)) < std::abs(e_sigma)) {
        ks.sigma_intensity = s;
        break;
      }
    }
  }
  return ks;
}

double relative_error(double achieved, double target) { return std::abs(achieved - target) / std::abs(target); }

}  // namespace

DesignResult design_decoherence(const DesignTarget& target, const PhysicalParams& params_template) {
  if (!(target.gamma_target > 0.0) || !(target.Gamma_target > 0.0)) {
    throw std::invalid_argument("design targets must be positive");
  }
  if (target.i0_min > target.i0_max || target.alpha_min > target.alpha_max ||
      (target.free_zeeman && target.zeeman_min > target.zeeman_max)) {
    throw std::invalid_argument("design bounds must be well ordered");
  }
  PhysicalParams p = validated(params_template);
  p.omega_mw = target.omega_mw;
  p.delta_laser = target.delta_laser;

  const double r1 = target.gamma_target - p.gamma_ph_extra;
  if (!(r1 > 0.0)) {
    throw Infeasible("gamma_ph_extra", "gamma target does not exceed the non-optical dephasing gamma_ph");
  }
  const double r2 = target.omega_mw * target.omega_mw / target.Gamma_target;
  if (!(r2 > 0.0)) throw Infeasible("omega_mw", "zero microwave Rabi frequency leaves Gamma undefined");
  // ⟨P₃⟩ < ½ per component caps r₁ below Γ₃/2 and r₂ below Γ₃.
  if (r1 >= 0.5 * p.gamma3) {
    throw Infeasible("saturation", "gamma target needs r1 >= Gamma3/2, beyond full saturation of the pi component");
  }
  if (r2 >= p.gamma3) {
    throw Infeasible("saturation", "Gamma target needs r2 >= Gamma3, beyond full saturation of the sigma components");
  }

  KnobSolve best;
  double best_zeeman = p.zeeman_delta;
  if (!target.free_zeeman) {
    best = solve_intensities(p, r1, r2);
  } else {
    // I₀cos²α does not depend on B, so minimizing I₀ minimizes I₀sin²α.
    const auto total_at = [&](double z) {
      PhysicalParams q = p;
      q.zeeman_delta = z;
      const KnobSolve ks = solve_intensities(q, r1, r2);
      return std::pair{ks.pi_intensity + ks.sigma_intensity, ks};
    };
    const int scan = 400;
    double best_total = std::numeric_limits<double>::infinity();
    double step = (target.zeeman_max - target.zeeman_min) / scan;
    for (int k = 0; k <= scan; ++k) {
      const double z = target.zeeman_min + k * step;
      const auto [total, ks] = total_at(z);
      if (total < best_total) {
        best_total = total;
        best = ks;
        best_zeeman = z;
      }
    }
    if (step > 0.0) {
      double a = std::max(target.zeeman_min, best_zeeman - step);
      double b = std::min(target.zeeman_max, best_zeeman + step);
      const double g = (std::sqrt(5.0) - 1.0) / 2.0;
      for (int it = 0; it < 80 && b - a > 1e-12 * (std::abs(best_zeeman) + step); ++it) {
        const double x1 = b - g * (b - a), x2 = a + g * (b - a);
        if (total_at(x1).first < total_at(x2).first) {
          b = x2;
        } else {
          a = x1;
        }
      }
      const double z = 0.5 * (a + b);
      const auto [total, ks] = total_at(z);
      if (total < best_total) {
        best = ks;
        best_zeeman = z;
      }
    }
  }

  DesignResult result;
  result.i0 = best.pi_intensity + best.sigma_intensity;
  result.alpha = std::atan2(std::sqrt(best.sigma_intensity), std::sqrt(best.pi_intensity));
  result.zeeman_delta = best_zeeman;
  result.newton_steps = best.newton_steps;

  if (result.i0 > target.i0_max) {
    throw Infeasible("i0_max", "required light intensity I0 = " + std::to_string(result.i0) +
                                   " exceeds the bound " + std::to_string(target.i0_max));
  }
  if (result.i0 < target.i0_min) {
    throw Infeasible("i0_min", "required light intensity I0 = " + std::to_string(result.i0) +
                                   " is below the bound " + std::to_string(target.i0_min));
  }
  if (result.alpha < target.alpha_min) {
    throw Infeasible("alpha_min", "required polarization angle " + std::to_string(result.alpha) +
                                      " rad is below the bound " + std::to_string(target.alpha_min));
  }
  if (result.alpha > target.alpha_max) {
    throw Infeasible("alpha_max", "required polarization angle " + std::to_string(result.alpha) +
                                      " rad exceeds the bound " + std::to_string(target.alpha_max));
  }

  p.i0 = result.i0;
  p.alpha = result.alpha;
  p.zeeman_delta = result.zeeman_delta;
  result.params = p;
  result.achieved = effective_rates(p, scattering_rates(p));
  if (relative_error(result.achieved.gamma_eff, target.gamma_target) > 1e-3 || !result.achieved.Gamma_eff ||
      relative_error(*result.achieved.Gamma_eff, target.Gamma_target) > 1e-3) {
    throw NoConvergence("knob solve did not reproduce the targets within 0.1%");
  }
  return result;
}

}  // namespace lidec
