#pragma once

// Generic explicit integrators over fixed-size Eigen vectors. Each engine
// reports the state at every requested sample time through an observer
// callback `observe(sample_index, state)`.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <unsupported/Eigen/MatrixFunctions>

#include "lidec/errors.hpp"

namespace lidec::ode {

struct AdaptiveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  // 0 picks a step from the derivative scale
  long max_steps = 50'000'000;
};

namespace detail {

template <typename Scalar>
void check_grid(std::span<const Scalar> times, Scalar t0) {
  Scalar prev = t0;
  for (const Scalar& t : times) {
    if (!(t >= prev)) throw std::invalid_argument("sample times must be non-decreasing and start at or after t0");
    prev = t;
  }
}

}  // namespace detail

/// Classical fourth-order Runge-Kutta with a fixed step; the last step before
/// each sample time is shortened so samples land exactly.
template <typename Vector, typename Rhs, typename Observer>
void rk4(const Rhs& f, Vector x, typename Vector::Scalar t0,
         std::span<const typename Vector::Scalar> times, typename Vector::Scalar dt,
         Observer&& observe) {
  using Scalar = typename Vector::Scalar;
  if (!(dt > Scalar(0))) throw std::invalid_argument("rk4 step must be positive");
  detail::check_grid(times, t0);
  Scalar t = t0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    while (t < times[i]) {
      const Scalar h = std::min(dt, times[i] - t);
      const Vector k1 = f(x);
      const Vector k2 = f(Vector(x + (h / 2) * k1));
      const Vector k3 = f(Vector(x + (h / 2) * k2));
      const Vector k4 = f(Vector(x + h * k3));
      x += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
      // Snap instead of accumulating h so the loop cannot leave a sliver step.
      t = (h == times[i] - t) ? times[i] : t + h;
    }
    observe(i, x);
  }
}

/// Dormand-Prince 5(4) with an error-per-step controller. Steps are clipped to
/// the sample times, so every sample is an actual step endpoint.
template <typename Vector, typename Rhs, typename Observer>
void dormand_prince(const Rhs& f, Vector x, typename Vector::Scalar t0,
                    std::span<const typename Vector::Scalar> times, const AdaptiveOptions& opts,
                    Observer&& observe) {
  using Scalar = typename Vector::Scalar;
  using std::abs;
  using std::max;
  using std::min;
  using std::pow;
  if (!(opts.rtol > 0) || !(opts.atol > 0)) throw std::invalid_argument("tolerances must be positive");
  detail::check_grid(times, t0);

  constexpr Scalar a21 = Scalar(1) / 5;
  constexpr Scalar a31 = Scalar(3) / 40, a32 = Scalar(9) / 40;
  constexpr Scalar a41 = Scalar(44) / 45, a42 = Scalar(-56) / 15, a43 = Scalar(32) / 9;
  constexpr Scalar a51 = Scalar(19372) / 6561, a52 = Scalar(-25360) / 2187, a53 = Scalar(64448) / 6561,
                   a54 = Scalar(-212) / 729;
  constexpr Scalar a61 = Scalar(9017) / 3168, a62 = Scalar(-355) / 33, a63 = Scalar(46732) / 5247,
                   a64 = Scalar(49) / 176, a65 = Scalar(-5103) / 18656;
  constexpr Scalar b1 = Scalar(35) / 384, b3 = Scalar(500) / 1113, b4 = Scalar(125) / 192,
                   b5 = Scalar(-2187) / 6784, b6 = Scalar(11) / 84;
  // Difference between the 5th- and embedded 4th-order weights.
  constexpr Scalar e1 = Scalar(71) / 57600, e3 = Scalar(-71) / 16695, e4 = Scalar(71) / 1920,
                   e5 = Scalar(-17253) / 339200, e6 = Scalar(22) / 525, e7 = Scalar(-1) / 40;

  const Scalar rtol = Scalar(opts.rtol);
  const Scalar atol = Scalar(opts.atol);
  Scalar t = t0;
  Vector k1 = f(x);

  Scalar h = Scalar(opts.initial_step);
  if (!(h > 0)) {
    const Scalar scale = (k1.array().abs() / (atol + rtol * x.array().abs())).maxCoeff();
    h = scale > 0 ? Scalar(0.01) / scale : Scalar(1e-6);
    if (!times.empty() && times.back() > t0) h = min(h, (times.back() - t0) / 100);
  }

  long steps = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    while (t < times[i]) {
      if (++steps > opts.max_steps) {
        throw StiffnessFailure("step budget of " + std::to_string(opts.max_steps) +
                               " exhausted at t = " + std::to_string(static_cast<double>(t)));
      }
      const Scalar remaining = times[i] - t;
      const bool lands = h >= remaining;
      const Scalar hs = lands ? remaining : h;
      if (hs <= abs(t) * Scalar(1e-14) && !lands) {
        throw StiffnessFailure("step size underflow at t = " + std::to_string(static_cast<double>(t)));
      }

      const Vector k2 = f(Vector(x + hs * (a21 * k1)));
      const Vector k3 = f(Vector(x + hs * (a31 * k1 + a32 * k2)));
      const Vector k4 = f(Vector(x + hs * (a41 * k1 + a42 * k2 + a43 * k3)));
      const Vector k5 = f(Vector(x + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
      const Vector k6 = f(Vector(x + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
      const Vector x_new = x + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Vector k7 = f(x_new);
      const Vector err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

      const auto scale = atol + rtol * x.array().abs().max(x_new.array().abs());
      const Scalar err_norm = (err.array() / scale).abs().maxCoeff();
      if (!std::isfinite(static_cast<double>(err_norm))) {
        throw StiffnessFailure("non-finite error estimate at t = " + std::to_string(static_cast<double>(t)));
      }

      if (err_norm <= Scalar(1)) {
        t = lands ? times[i] : t + hs;
        x = x_new;
        k1 = k7;  // first-same-as-last
        const Scalar grow = err_norm > 0 ? Scalar(0.9) * pow(err_norm, Scalar(-0.2)) : Scalar(5);
        // A step clipped to a sample time says nothing about the natural step.
        if (!lands || hs >= h) h = hs * min(Scalar(5), max(Scalar(0.2), grow));
      } else {
        h = hs * max(Scalar(0.1), Scalar(0.9) * pow(err_norm, Scalar(-0.2)));
      }
    }
    observe(i, x);
  }
}

/// Exact propagation of a linear time-invariant system ẋ = A·x using the
/// matrix exponential over each sample interval; intervals of equal length
/// share one exponential. When cᵀA = 0 for the given `conserved` functional,
/// each step matrix is corrected so that cᵀ·exp(A·dt) = cᵀ holds to rounding;
/// the Padé exponential of a stiff generator otherwise drifts by ~1e-13 per step.
template <typename Vector, typename Matrix, typename Observer>
void linear_propagator(const Matrix& generator, Vector x, typename Vector::Scalar t0,
                       std::span<const typename Vector::Scalar> times, Observer&& observe,
                       const Eigen::Matrix<typename Vector::Scalar, 1, Vector::RowsAtCompileTime>* conserved =
                           nullptr) {
  using Scalar = typename Vector::Scalar;
  using std::abs;
  detail::check_grid(times, t0);
  std::map<Scalar, Matrix> cache;
  Scalar t = t0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const Scalar dt = times[i] - t;
    if (dt > Scalar(0)) {
      auto it = cache.find(dt);
      if (it == cache.end()) {
        Matrix step = Matrix(generator * dt).exp();
        if (conserved) {
          const auto defect = (*conserved - *conserved * step).eval();
          // Book each column's defect on its largest conserved entry.
          for (Eigen::Index j = 0; j < step.cols(); ++j) {
            Eigen::Index k = -1;
            for (Eigen::Index r = 0; r < step.rows(); ++r) {
              if ((*conserved)[r] != Scalar(0) && (k < 0 || abs(step(r, j)) > abs(step(k, j)))) k = r;
            }
            if (k >= 0) step(k, j) += defect[j] / (*conserved)[k];
          }
        }
        it = cache.emplace(dt, step).first;
      }
      x = it->second * x;
    }
    t = times[i];
    observe(i, x);
  }
}

}  // namespace lidec::ode
