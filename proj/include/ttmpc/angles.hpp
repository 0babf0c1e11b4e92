#pragma once

#include <cmath>
#include <numbers>

namespace ttmpc {

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

/// Shifts `a` by multiples of 2*pi so it lies within pi of `near`.
inline double unwrap_near(double a, double near) { return near + wrap_angle(a - near); }

}  // namespace ttmpc
