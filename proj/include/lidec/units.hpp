#pragma once

#include <numbers>

namespace lidec {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// All rates live in rad/s internally. The I/O boundary speaks 2π×kHz, i.e. a
// value v stands for the angular frequency 2π·v·10³ rad/s.
constexpr double from_2pi_khz(double v) { return v * kTwoPi * 1e3; }
constexpr double to_2pi_khz(double w) { return w / (kTwoPi * 1e3); }

constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace lidec
