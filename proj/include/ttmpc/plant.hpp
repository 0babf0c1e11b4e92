#pragma once

// Ground-truth vehicle for closed-loop runs: the full coupled kinematics with
// hitch-angle evolution, speed and steering actuator lags, saturation and a
// noisy, quantized sensor model.

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "ttmpc/angles.hpp"
#include "ttmpc/nmhe.hpp"
#include "ttmpc/vehicle_model.hpp"

namespace ttmpc {

struct PlantConfig {
  int substeps{10};
  double steering_lag{0.15};  // time constant [s]; 0 disables the lag
  double speed_lag{0.5};      // [s]; 0 makes v follow the command instantly
  double speed_command{1.0};  // [m/s]
  bool coupling{true};        // include the tractor-steering term in the trailer yaw rate
  bool hitch_dynamics{true};  // beta' = theta' - psi'; otherwise beta is held
  SteeringLimits limits{};

  void validate() const {
    if (substeps < 1) throw std::invalid_argument("plant substeps must be >= 1");
    if (steering_lag < 0.0 || speed_lag < 0.0) throw std::invalid_argument("plant time constants must be >= 0");
    if (!std::isfinite(speed_command)) throw std::invalid_argument("plant speed command must be finite");
  }
};

/// Vehicle state plus the actuator states (the steering angles the wheels actually have).
struct PlantState {
  VehicleState vehicle;
  ControlInput actuator;
};

/// Piecewise-constant true slip: `initial` until `drop_time`, `after` from then on.
struct SlipProfile {
  SlipParams initial{0.9, 0.9, 0.9};
  std::optional<double> drop_time;
  SlipParams after{0.6, 0.6, 0.6};

  [[nodiscard]] SlipParams at(double t) const { return drop_time && t >= *drop_time ? after : initial; }
};

namespace detail {

using PlantVec = Eigen::Matrix<double, 10, 1>;  // 6 poses, beta, v, delta_t, delta_i

inline PlantVec plant_rate(const PlantVec& s, const ControlInput& cmd, const SlipParams& slip,
                           const VehicleGeometry& geom, const PlantConfig& cfg) {
  VehicleState vs;
  vs.set_poses(s.head<6>());
  vs.beta = s(6);
  vs.v = s(7);
  const ControlInput wheels = cfg.limits.clamp({s(8), s(9)});
  PlantVec r;
  CoupledRate poses = full_dynamics(vs, wheels, slip, geom);
  if (!cfg.coupling) poses(5) -= interaction_term(vs, wheels, slip, geom);
  r.head<6>() = poses;
  r(6) = cfg.hitch_dynamics ? poses(2) - poses(5) : 0.0;
  r(7) = cfg.speed_lag > 0.0 ? (cfg.speed_command - s(7)) / cfg.speed_lag : 0.0;
  r(8) = cfg.steering_lag > 0.0 ? (cmd.delta_t - s(8)) / cfg.steering_lag : 0.0;
  r(9) = cfg.steering_lag > 0.0 ? (cmd.delta_i - s(9)) / cfg.steering_lag : 0.0;
  return r;
}

}  // namespace detail

class PlantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Advances the truth by dt. The applied command is saturated before it enters
/// the steering lag and the wheel angles are saturated again on the way out.
inline PlantState step_plant(const PlantState& state, const ControlInput& applied, const SlipParams& slip, double dt,
                             const VehicleGeometry& geom, const PlantConfig& cfg) {
  if (!(dt > 0.0)) throw std::invalid_argument("plant step must be positive");
  const ControlInput cmd = cfg.limits.clamp(applied);
  detail::PlantVec s;
  s << state.vehicle.poses(), state.vehicle.beta, state.vehicle.v, state.actuator.delta_t, state.actuator.delta_i;
  if (cfg.steering_lag <= 0.0) s(8) = cmd.delta_t, s(9) = cmd.delta_i;
  if (cfg.speed_lag <= 0.0) s(7) = cfg.speed_command;
  const double h = dt / cfg.substeps;
  for (int i = 0; i < cfg.substeps; ++i)
    s = rk4_step([&](const detail::PlantVec& x) { return detail::plant_rate(x, cmd, slip, geom, cfg); }, s, h);
  if (!s.allFinite()) throw PlantError("plant state became non-finite");

  PlantState next;
  next.vehicle.set_poses(s.head<6>());
  next.vehicle.beta = s(6);
  next.vehicle.v = s(7);
  next.actuator = cfg.limits.clamp({s(8), s(9)});
  return next;
}

/// Standard deviations of the measured channels; steering is quantized after noise.
struct SensorNoise {
  double x_t{0.03}, y_t{0.03}, x_i{0.03}, y_i{0.03};
  double beta{0.0175};
  double v{0.1};
  double delta_t{0.0175}, delta_i{0.0175};
  double steering_resolution{deg2rad(1.0)};  // 0 disables quantization

  [[nodiscard]] Eigen::Matrix<double, 8, 1> sd() const {
    Eigen::Matrix<double, 8, 1> s;
    s << x_t, y_t, x_i, y_i, beta, v, delta_t, delta_i;
    return s;
  }
  void validate() const {
    if ((sd().array() < 0.0).any() || !sd().allFinite()) throw std::invalid_argument("noise sd must be finite and >= 0");
    if (steering_resolution < 0.0) throw std::invalid_argument("steering resolution must be >= 0");
  }
};

inline double quantize(double value, double resolution) {
  return resolution > 0.0 ? resolution * std::round(value / resolution) : value;
}

/// One draw per channel in a fixed order, even for zero sd, so the random
/// stream does not depend on which channels are noisy.
template <typename Rng>
MeasurementSample sense(double t, const PlantState& truth, const SensorNoise& noise, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Matrix<double, 8, 1> sd = noise.sd();
  Eigen::Matrix<double, 8, 1> draw;
  for (int i = 0; i < 8; ++i) draw(i) = n01(rng);
  MeasurementSample y;
  y.t = t;
  y.x_t = truth.vehicle.x_t + sd(0) * draw(0);
  y.y_t = truth.vehicle.y_t + sd(1) * draw(1);
  y.x_i = truth.vehicle.x_i + sd(2) * draw(2);
  y.y_i = truth.vehicle.y_i + sd(3) * draw(3);
  y.beta = truth.vehicle.beta + sd(4) * draw(4);
  y.v = truth.vehicle.v + sd(5) * draw(5);
  y.delta_t = quantize(truth.actuator.delta_t + sd(6) * draw(6), noise.steering_resolution);
  y.delta_i = quantize(truth.actuator.delta_i + sd(7) * draw(7), noise.steering_resolution);
  return y;
}

}  // namespace ttmpc
