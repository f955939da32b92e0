#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "lidec/errors.hpp"
#include "lidec/estimation.hpp"

namespace lidec {

namespace {

using Params = Eigen::Matrix<double, 5, 1>;  // p_inf, B, λ, ω, ψ in normalized time
enum : int { kP = 0, kB, kLambda, kOmega, kPsi };

constexpr double kPi = std::numbers::pi;

// Samples on t ∈ [0, 1] with t = (τ − τ₀)/(τ_last − τ₀); fitting in these
// units makes the estimator exactly covariant under rescaling of τ.
struct NormalizedCurve {
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  Eigen::VectorXd w;  // 1/σ
  double tau0 = 0.0;
  double span = 1.0;
  bool uniform = false;
};

double model_at(const Params& q, double t) {
  return q[kP] + q[kB] * std::exp(-q[kLambda] * t) * std::cos(q[kOmega] * t + q[kPsi]);
}

Eigen::VectorXd weighted_residuals(const NormalizedCurve& c, const Params& q) {
  Eigen::VectorXd r(c.t.size());
  for (Eigen::Index i = 0; i < c.t.size(); ++i) r[i] = c.w[i] * (c.y[i] - model_at(q, c.t[i]));
  return r;
}

double cost_of(const NormalizedCurve& c, const Params& q) { return 0.5 * weighted_residuals(c, q).squaredNorm(); }

Params project(Params q) {
  q[kLambda] = std::max(q[kLambda], 0.0);
  q[kP] = std::clamp(q[kP], 0.0, 1.0);
  return q;
}

NormalizedCurve normalize(const CurveSamples& curve) {
  const std::size_t n = curve.tau.size();
  if (curve.p1.size() != n) throw std::invalid_argument("tau and p1 differ in length");
  if (!curve.sigma.empty() && curve.sigma.size() != n) throw std::invalid_argument("sigma length mismatch");
  if (n < 8) throw OscillationUnresolved("need at least 8 samples, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(curve.tau[i]) || !std::isfinite(curve.p1[i])) throw std::invalid_argument("non-finite sample");
    if (i > 0 && !(curve.tau[i] > curve.tau[i - 1])) throw std::invalid_argument("tau must be strictly increasing");
    if (!curve.sigma.empty() && !(curve.sigma[i] > 0.0)) throw std::invalid_argument("sigma must be positive");
  }

  NormalizedCurve c;
  c.tau0 = curve.tau.front();
  c.span = curve.tau.back() - c.tau0;
  const auto len = static_cast<Eigen::Index>(n);
  c.t.resize(len);
  c.y.resize(len);
  c.w.resize(len);
  for (Eigen::Index i = 0; i < len; ++i) {
    const auto k = static_cast<std::size_t>(i);
    c.t[i] = (curve.tau[k] - c.tau0) / c.span;
    c.y[i] = curve.p1[k];
    c.w[i] = curve.sigma.empty() ? 1.0 : 1.0 / curve.sigma[k];
  }
  // Normalize weights to unit mean square so costs are comparable across inputs.
  c.w /= std::sqrt(c.w.squaredNorm() / static_cast<double>(len));

  const double step = 1.0 / static_cast<double>(len - 1);
  c.uniform = true;
  for (Eigen::Index i = 1; i < len; ++i) {
    if (std::abs((c.t[i] - c.t[i - 1]) - step) > 1e-9 * step) {
      c.uniform = false;
      break;
    }
  }
  return c;
}

// Weighted least squares y ≈ X·β.
Eigen::VectorXd weighted_lstsq(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xw = w.asDiagonal() * x;
  const Eigen::VectorXd yw = w.cwiseProduct(y);
  return xw.colPivHouseholderQr().solve(yw);
}

// Residual after removing a cubic trend, so slow drifts of the mean do not
// masquerade as the dominant spectral line.
Eigen::VectorXd detrended(const NormalizedCurve& c) {
  Eigen::MatrixXd x(c.t.size(), 4);
  for (Eigen::Index i = 0; i < c.t.size(); ++i) {
    const double t = c.t[i];
    x.row(i) << 1.0, t, t * t, t * t * t;
  }
  const Eigen::VectorXd beta = weighted_lstsq(x, c.y, c.w);
  return c.y - x * beta;
}

double spectral_power(const NormalizedCurve& c, const Eigen::VectorXd& r, double omega) {
  std::complex<double> acc{0.0, 0.0};
  if (c.uniform) {
    const double dt = c.t[1] - c.t[0];
    const std::complex<double> rot = std::polar(1.0, -omega * dt);
    std::complex<double> phasor{1.0, 0.0};
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      acc += c.w[i] * c.w[i] * r[i] * phasor;
      phasor *= rot;
    }
  } else {
    for (Eigen::Index i = 0; i < r.size(); ++i) acc += c.w[i] * c.w[i] * r[i] * std::polar(1.0, -omega * c.t[i]);
  }
  return std::norm(acc);
}

// Golden-section refinement of a periodogram maximum inside [a, b].
double refine_peak(const NormalizedCurve& c, const Eigen::VectorXd& r, double a, double b) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  const double scale = 0.5 * (a + b);
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = spectral_power(c, r, x1), f2 = spectral_power(c, r, x2);
  for (int it = 0; it < 60 && b - a > 1e-12 * scale; ++it) {
    if (f1 > f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = spectral_power(c, r, x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = spectral_power(c, r, x2);
    }
  }
  return 0.5 * (a + b);
}

// The strongest local maxima of the periodogram of the detrended record,
// strongest first. When the nutation dies out early in a long record the
// residual of the slow drift can outrank it, so several lines are kept.
std::vector<double> spectral_peaks(const NormalizedCurve& c, std::size_t count) {
  const Eigen::VectorXd r = detrended(c);
  double min_dt = 1.0;
  for (Eigen::Index i = 1; i < c.t.size(); ++i) min_dt = std::min(min_dt, c.t[i] - c.t[i - 1]);
  const double lo = 2.0 * kPi;        // one full period across the record
  const double hi = kPi / min_dt;     // Nyquist of the densest sampling
  const double step = 2.0 * kPi / 8;  // 8x oversampled relative to 1/span
  std::vector<double> grid, power;
  for (double om = lo; om <= hi; om += step) {
    grid.push_back(om);
    power.push_back(spectral_power(c, r, om));
  }
  std::vector<std::size_t> maxima;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const bool left = i == 0 || power[i] >= power[i - 1];
    const bool right = i + 1 == grid.size() || power[i] > power[i + 1];
    if (left && right) maxima.push_back(i);
  }
  std::sort(maxima.begin(), maxima.end(), [&power](std::size_t a, std::size_t b) { return power[a] > power[b]; });
  if (maxima.size() > count) maxima.resize(count);
  std::vector<double> peaks;
  for (const std::size_t i : maxima) {
    peaks.push_back(refine_peak(c, r, std::max(lo, grid[i] - step), std::min(hi, grid[i] + step)));
  }
  if (peaks.empty()) peaks.push_back(lo);
  return peaks;
}

// Log-linear regression of windowed oscillation amplitudes against time.
double envelope_rate(const NormalizedCurve& c, double omega) {
  const double period = 2.0 * kPi / omega;
  const double mean_dt = 1.0 / static_cast<double>(c.t.size() - 1);
  const double window = period * std::max(1.0, std::ceil(6.0 * mean_dt / period));
  std::vector<double> centers, log_amps, weights;
  Eigen::Index start = 0;
  while (start < c.t.size()) {
    Eigen::Index end = start;
    while (end < c.t.size() && c.t[end] < c.t[start] + window) ++end;
    const Eigen::Index count = end - start;
    if (count >= 4 && c.t[end - 1] - c.t[start] > 0.5 * window) {
      Eigen::MatrixXd x(count, 3);
      for (Eigen::Index i = 0; i < count; ++i) {
        const double t = c.t[start + i];
        x.row(i) << 1.0, std::cos(omega * t), std::sin(omega * t);
      }
      const Eigen::VectorXd beta =
          weighted_lstsq(x, c.y.segment(start, count), c.w.segment(start, count));
      const double amp = std::hypot(beta[1], beta[2]);
      if (amp > 0.0) {
        centers.push_back(c.t.segment(start, count).mean());
        log_amps.push_back(std::log(amp));
        weights.push_back(amp * amp);
      }
    }
    start = std::max(end, start + 1);
  }
  if (centers.size() < 3) return 0.0;
  const double sw = std::accumulate(weights.begin(), weights.end(), 0.0);
  double mt = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    mt += weights[i] * centers[i] / sw;
    ml += weights[i] * log_amps[i] / sw;
  }
  double stt = 0.0, stl = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    stt += weights[i] * (centers[i] - mt) * (centers[i] - mt);
    stl += weights[i] * (centers[i] - mt) * (log_amps[i] - ml);
  }
  return stt > 0.0 ? std::max(0.0, -stl / stt) : 0.0;
}

Params initial_guess(const NormalizedCurve& c, double omega) {
  const double lambda = envelope_rate(c, omega);
  Eigen::MatrixXd x(c.t.size(), 3);
  for (Eigen::Index i = 0; i < c.t.size(); ++i) {
    const double t = c.t[i];
    const double env = std::exp(-lambda * t);
    x.row(i) << 1.0, env * std::cos(omega * t), env * std::sin(omega * t);
  }
  const Eigen::VectorXd beta = weighted_lstsq(x, c.y, c.w);
  Params q;
  q << beta[0], std::hypot(beta[1], beta[2]), lambda, omega, std::atan2(-beta[2], beta[1]);
  return project(q);
}

Eigen::Matrix<double, Eigen::Dynamic, 5> numeric_jacobian(const NormalizedCurve& c, const Params& q) {
  Eigen::Matrix<double, Eigen::Dynamic, 5> jac(c.t.size(), 5);
  const Params scale(1.0, std::max(std::abs(q[kB]), 1e-3), std::max(q[kOmega], 1.0), std::max(q[kOmega], 1.0), 1.0);
  for (int j = 0; j < 5; ++j) {
    const double h = 1e-6 * (std::abs(q[j]) + 1e-3 * scale[j]);
    Params up = q, down = q;
    up[j] += h;
    down[j] -= h;
    // Model differences; the residual carries a minus sign.
    for (Eigen::Index i = 0; i < c.t.size(); ++i) {
      jac(i, j) = -c.w[i] * (model_at(up, c.t[i]) - model_at(down, c.t[i])) / (2.0 * h);
    }
  }
  return jac;
}

Params nelder_mead(const NormalizedCurve& c, const Params& start, int max_iterations) {
  std::array<Params, 6> simplex;
  std::array<double, 6> f{};
  simplex[0] = start;
  const Params step(0.05, 0.05, 0.1 * std::max(start[kOmega], 1.0), 0.02 * std::max(start[kOmega], 1.0), 0.3);
  for (int j = 0; j < 5; ++j) {
    simplex[static_cast<std::size_t>(j) + 1] = start;
    simplex[static_cast<std::size_t>(j) + 1][j] += step[j];
  }
  for (std::size_t k = 0; k < 6; ++k) {
    simplex[k] = project(simplex[k]);
    f[k] = cost_of(c, simplex[k]);
  }
  for (int it = 0; it < max_iterations; ++it) {
    std::array<std::size_t, 6> order{0, 1, 2, 3, 4, 5};
    std::sort(order.begin(), order.end(), [&f](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    const std::size_t best = order[0], worst = order[5], second = order[4];
    if (f[worst] - f[best] <= 1e-15 * (f[best] + 1e-300)) break;
    Params centroid = Params::Zero();
    for (std::size_t k = 0; k < 5; ++k) centroid += simplex[order[k]] / 5.0;
    const Params refl = project(centroid + (centroid - simplex[worst]));
    const double fr = cost_of(c, refl);
    if (fr < f[best]) {
      const Params expd = project(centroid + 2.0 * (centroid - simplex[worst]));
      const double fe = cost_of(c, expd);
      simplex[worst] = fe < fr ? expd : refl;
      f[worst] = std::min(fe, fr);
    } else if (fr < f[second]) {
      simplex[worst] = refl;
      f[worst] = fr;
    } else {
      const Params contr = project(centroid + 0.5 * (simplex[worst] - centroid));
      const double fc = cost_of(c, contr);
      if (fc < f[worst]) {
        simplex[worst] = contr;
        f[worst] = fc;
      } else {
        for (std::size_t k = 1; k < 6; ++k) {
          simplex[order[k]] = project(simplex[best] + 0.5 * (simplex[order[k]] - simplex[best]));
          f[order[k]] = cost_of(c, simplex[order[k]]);
        }
      }
    }
  }
  const auto it = std::min_element(f.begin(), f.end());
  return simplex[static_cast<std::size_t>(it - f.begin())];
}

struct LmOutcome {
  Params q;
  bool converged = false;
  bool jacobian_failed = false;
  int iterations = 0;
};

LmOutcome levenberg_marquardt(const NormalizedCurve& c, Params q, const FitOptions& opts,
                              std::vector<double>& history) {
  LmOutcome out;
  double cost = cost_of(c, q);
  double mu = 1e-3;
  while (out.iterations < opts.max_iterations) {
    ++out.iterations;
    const auto jac = numeric_jacobian(c, q);
    const Eigen::VectorXd r = weighted_residuals(c, q);
    if (!jac.allFinite() || !r.allFinite()) {
      out.jacobian_failed = true;
      break;
    }
    if (cost <= 1e-30 * static_cast<double>(c.t.size())) {
      out.converged = true;
      break;
    }
    const Eigen::Matrix<double, 5, 5> h = jac.transpose() * jac;
    const Params g = jac.transpose() * r;
    Eigen::Matrix<double, 5, 5> damped = h;
    damped.diagonal() += mu * h.diagonal() + Params::Constant(1e-300);
    const Params delta = -damped.ldlt().solve(g);
    const Params trial = project(q + delta);
    const double trial_cost = cost_of(c, trial);
    if (std::isfinite(trial_cost) && trial_cost < cost) {
      const double drop = cost - trial_cost;
      const double moved = (trial - q).norm();
      q = trial;
      cost = trial_cost;
      history.push_back(cost);
      mu = std::max(mu / 3.0, 1e-15);
      if (drop <= opts.cost_tolerance * cost || moved <= opts.step_tolerance * (q.norm() + opts.step_tolerance)) {
        out.converged = true;
        break;
      }
    } else {
      mu *= 4.0;
      // No damping produces descent: q is a minimum to working precision.
      if (mu > 1e12) {
        out.converged = true;
        break;
      }
    }
  }
  out.q = q;
  return out;
}

}  // namespace

double nutation_model(const NutationFit& fit, double tau) {
  return fit.p_inf + fit.amplitude * std::exp(-fit.lambda * tau) * std::cos(fit.omega * tau + fit.phase);
}

NutationFit fit_nutation(const CurveSamples& curve, const FitOptions& options) {
  const NormalizedCurve c = normalize(curve);
  NutationFit fit;

  // The strongest spectral line seeds the fit. If that run does not resolve
  // an underdamped oscillation, the other candidate lines get a start each
  // and the cheapest resolved one replaces it, provided it lowers the cost.
  struct Run {
    LmOutcome lm;
    int iterations = 0;
    std::vector<double> history;
    double cost = 0.0;
    bool resolved = false;
  };
  const auto run_from = [&](double omega) {
    Run run;
    run.lm = levenberg_marquardt(c, initial_guess(c, omega), options, run.history);
    run.iterations = run.lm.iterations;
    if (run.lm.jacobian_failed || !run.lm.converged) {
      // Derivative-free restart, then one more polish.
      const Params start = nelder_mead(c, run.lm.q, 4000);
      run.lm = levenberg_marquardt(c, start, options, run.history);
      run.iterations += run.lm.iterations;
    }
    run.cost = cost_of(c, run.lm.q);
    run.resolved = run.lm.q[kOmega] >= 2.0 * kPi && run.lm.q[kLambda] < run.lm.q[kOmega];
    return run;
  };
  const std::vector<double> lines = spectral_peaks(c, 3);
  Run chosen = run_from(lines.front());
  if (!chosen.resolved) {
    const double bar = chosen.cost;
    for (std::size_t k = 1; k < lines.size(); ++k) {
      Run alt = run_from(lines[k]);
      if (alt.resolved && alt.cost < bar && (!chosen.resolved || alt.cost < chosen.cost)) chosen = std::move(alt);
    }
  }
  const LmOutcome lm = chosen.lm;
  fit.iterations = chosen.iterations;
  fit.cost_history = std::move(chosen.history);
  const Params q = lm.q;
  fit.converged = lm.converged && !lm.jacobian_failed;

  // Back to absolute time: e^(−λ(τ−τ₀)) cos(ω(τ−τ₀) + ψ) = A e^(−λτ) cos(Ωτ + φ).
  fit.omega = q[kOmega] / c.span;
  fit.lambda = q[kLambda] / c.span;
  fit.p_inf = q[kP];
  fit.amplitude = q[kB] * std::exp(fit.lambda * c.tau0);
  fit.phase = q[kPsi] - fit.omega * c.tau0;
  if (fit.amplitude < 0.0) {
    fit.amplitude = -fit.amplitude;
    fit.phase += kPi;
  }
  fit.phase = std::remainder(fit.phase, 2.0 * kPi);
  if (fit.phase <= -kPi) fit.phase += 2.0 * kPi;

  double ss = 0.0;
  for (Eigen::Index i = 0; i < c.t.size(); ++i) {
    const double d = c.y[i] - model_at(q, c.t[i]);
    ss += d * d;
  }
  fit.residual_rms = std::sqrt(ss / static_cast<double>(c.t.size()));
  fit.low_confidence = std::abs(q[kB]) < 3.0 * fit.residual_rms;

  if (!(fit.omega > 0.0) || fit.omega * c.span < 2.0 * kPi) {
    throw OscillationUnresolved("record spans less than one period of the fitted oscillation");
  }
  if (fit.lambda >= fit.omega) {
    throw OscillationUnresolved("overdamped: fitted envelope rate exceeds the oscillation frequency");
  }
  return fit;
}

double invert_saturation(double p_inf) {
  if (!(p_inf > 0.5) || p_inf > 1.0) {
    throw OutOfRange("saturation level must lie in (1/2, 1]; the rate ratio is unidentifiable otherwise");
  }
  // Both differences are exact in binary floating point for p ∈ (½, 1].
  return 2.0 * (1.0 - p_inf) / (2.0 * p_inf - 1.0);
}

EffectiveRates effective_from_fit(const NutationFit& fit, double omega_mw) {
  if (!fit.converged) throw NoConvergence("nutation fit did not converge");
  if (!(fit.lambda > 0.0)) throw DegenerateRates("zero envelope decay: no decoherence to quantify");
  const double ratio = invert_saturation(fit.p_inf);
  EffectiveRates eff;
  eff.gamma_eff = fit.lambda;
  const double r2 = fit.lambda * ratio;
  if (r2 > 0.0) eff.Gamma_eff = omega_mw * omega_mw / r2;
  eff.p1_inf = fit.p_inf;
  return eff;
}

}  // namespace lidec
