#pragma once

// Adaptive kinematic tricycle model of the tractor-trailer and its split into
// a tractor subsystem and a trailer subsystem plus the neglected coupling.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "ttmpc/angles.hpp"

namespace ttmpc {

using Pose = Eigen::Vector3d;  // (x, y, yaw)
using PoseRate = Eigen::Vector3d;
using CoupledRate = Eigen::Matrix<double, 6, 1>;

struct VehicleGeometry {
  double tractor_wheelbase{1.4};  // front axle to rear axle of the tractor [m]
  double trailer_length{1.3};     // second revolute joint to trailer axle [m]
  double hitch_offset{1.1};       // tractor rear axle to second revolute joint [m]
  double drawbar_length{0.2};     // [m]

  [[nodiscard]] bool valid() const {
    return tractor_wheelbase > 0.0 && trailer_length > 0.0 && hitch_offset > 0.0 && drawbar_length > 0.0;
  }
  void validate() const {
    if (!valid()) throw std::invalid_argument("vehicle geometry lengths must be strictly positive");
  }
};

/// Multiplicative slip corrections: wheel slip (mu), tractor side slip (kappa),
/// trailer side slip (eta).
struct SlipParams {
  double mu{1.0};
  double kappa{1.0};
  double eta{1.0};

  [[nodiscard]] Eigen::Vector3d vec() const { return {mu, kappa, eta}; }
  static SlipParams from(const Eigen::Vector3d& p) { return {p(0), p(1), p(2)}; }
  bool operator==(const SlipParams&) const = default;
};

struct ControlInput {
  double delta_t{0.0};  // tractor front-wheel steering [rad]
  double delta_i{0.0};  // trailer steering at the drawbar joint [rad]
  bool operator==(const ControlInput&) const = default;
};

struct SteeringLimits {
  double tractor{deg2rad(30.0)};
  double trailer{deg2rad(20.0)};

  [[nodiscard]] ControlInput clamp(const ControlInput& u) const {
    return {std::clamp(u.delta_t, -tractor, tractor), std::clamp(u.delta_i, -trailer, trailer)};
  }
  [[nodiscard]] bool admits(const ControlInput& u, double tol = 1e-12) const {
    return std::abs(u.delta_t) <= tractor + tol && std::abs(u.delta_i) <= trailer + tol;
  }
};

/// Full vehicle state. Yaw angles are kept unwrapped.
struct VehicleState {
  double x_t{0.0}, y_t{0.0}, theta{0.0};
  double x_i{0.0}, y_i{0.0}, psi{0.0};
  double beta{0.0};  // hitch angle between tractor and drawbar [rad]
  double v{0.0};     // longitudinal speed [m/s]

  [[nodiscard]] Pose tractor() const { return {x_t, y_t, theta}; }
  [[nodiscard]] Pose trailer() const { return {x_i, y_i, psi}; }
  [[nodiscard]] Eigen::Matrix<double, 6, 1> poses() const {
    Eigen::Matrix<double, 6, 1> p;
    p << x_t, y_t, theta, x_i, y_i, psi;
    return p;
  }
  void set_poses(const Eigen::Matrix<double, 6, 1>& p) {
    x_t = p(0), y_t = p(1), theta = p(2), x_i = p(3), y_i = p(4), psi = p(5);
  }
  bool operator==(const VehicleState&) const = default;
};

/// Tractor rows of the kinematic model (f_1). The tractor sees no coupling.
inline PoseRate tractor_subsystem_dynamics(const Pose& pose, double delta_t, const SlipParams& slip, double v,
                                           const VehicleGeometry& geom) {
  const double speed = slip.mu * v;
  return {speed * std::cos(pose(2)), speed * std::sin(pose(2)),
          speed * std::tan(slip.kappa * delta_t) / geom.tractor_wheelbase};
}

/// Trailer rows with the tractor-steering coupling dropped (f_2).
inline PoseRate trailer_subsystem_dynamics(const Pose& pose, double delta_i, double beta, const SlipParams& slip,
                                           double v, const VehicleGeometry& geom) {
  const double speed = slip.mu * v;
  return {speed * std::cos(pose(2)), speed * std::sin(pose(2)),
          speed / geom.trailer_length * std::sin(slip.eta * delta_i + beta)};
}

/// Yaw-rate contribution of the tractor steering on the trailer (third row of g_2).
inline double interaction_term(double delta_t, double delta_i, double beta, const SlipParams& slip, double v,
                               const VehicleGeometry& geom) {
  const double speed = slip.mu * v;
  return -speed / geom.trailer_length * (geom.hitch_offset / geom.tractor_wheelbase) *
         std::tan(slip.kappa * delta_t) * std::cos(slip.eta * delta_i + beta);
}

inline double interaction_term(const VehicleState& s, const ControlInput& u, const SlipParams& slip,
                               const VehicleGeometry& geom) {
  return interaction_term(u.delta_t, u.delta_i, s.beta, slip, s.v, geom);
}

/// Coupled model: (x_t, y_t, theta, x_i, y_i, psi) rates. Hitch angle and speed
/// enter as inputs; their evolution belongs to the plant or the estimator.
inline CoupledRate full_dynamics(const VehicleState& s, const ControlInput& u, const SlipParams& slip,
                                 const VehicleGeometry& geom) {
  const PoseRate tractor = tractor_subsystem_dynamics(s.tractor(), u.delta_t, slip, s.v, geom);
  PoseRate trailer = trailer_subsystem_dynamics(s.trailer(), u.delta_i, s.beta, slip, s.v, geom);
  trailer(2) += interaction_term(s, u, slip, geom);
  CoupledRate rate;
  rate << tractor, trailer;
  return rate;
}

/// Classical fourth-order Runge-Kutta step of x' = f(x).
template <typename State, typename Rhs>
State rk4_increment(Rhs&& f, const State& x, double dt) {
  const State k1 = f(x);
  const State k2 = f(State(x + 0.5 * dt * k1));
  const State k3 = f(State(x + 0.5 * dt * k2));
  const State k4 = f(State(x + dt * k3));
  return dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <typename Rhs, typename State>
State rk4_step(Rhs&& f, const State& x, double dt) {
  return x + rk4_increment(f, x, dt);
}

/// RK4 step of the six pose states under the coupled model; beta and v held.
inline VehicleState rk4_step(const VehicleState& s, const ControlInput& u, const SlipParams& slip,
                             const VehicleGeometry& geom, double dt) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  auto rhs = [&](const Vec6& p) {
    VehicleState tmp = s;
    tmp.set_poses(p);
    return Vec6(full_dynamics(tmp, u, slip, geom));
  };
  VehicleState next = s;
  next.set_poses(rk4_step(rhs, s.poses(), dt));
  return next;
}

}  // namespace ttmpc
