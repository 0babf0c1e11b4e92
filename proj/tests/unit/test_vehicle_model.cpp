#include <cmath>

#include <gtest/gtest.h>

#include "ttmpc/vehicle_model.hpp"

using namespace ttmpc;

namespace {

// Hand-evaluated rates for theta=0.3, psi=0.1, beta=0.2, v=1.2, delta_t=0.25,
// delta_i=-0.1, slip=(0.9, 0.8, 0.7) and the default geometry.
VehicleState sample_state() {
  VehicleState s;
  s.x_t = 2.0, s.y_t = -1.0, s.theta = 0.3;
  s.x_i = 0.5, s.y_i = -1.2, s.psi = 0.1;
  s.beta = 0.2;
  s.v = 1.2;
  return s;
}
const SlipParams kSlip{0.9, 0.8, 0.7};
const ControlInput kInput{0.25, -0.1};

}  // namespace

TEST(VehicleModel, TractorRowsMatchHandComputation) {
  const PoseRate r = tractor_subsystem_dynamics(sample_state().tractor(), kInput.delta_t, kSlip, 1.2, {});
  EXPECT_NEAR(r(0), 1.0317634082556546, 1e-14);
  EXPECT_NEAR(r(1), 0.31916182319424674, 1e-14);
  EXPECT_NEAR(r(2), 0.15637631310669026, 1e-14);
}

TEST(VehicleModel, TrailerRowsMatchHandComputation) {
  const PoseRate r = trailer_subsystem_dynamics(sample_state().trailer(), kInput.delta_i, 0.2, kSlip, 1.2, {});
  EXPECT_NEAR(r(0), 1.0746044985002678, 1e-14);
  EXPECT_NEAR(r(1), 0.10782008997857441, 1e-14);
  EXPECT_NEAR(r(2), 0.10769605694559266, 1e-14);
  EXPECT_NEAR(interaction_term(sample_state(), kInput, kSlip, {}), -0.13120190190140543, 1e-14);
}

TEST(VehicleModel, FullModelIsSubsystemsPlusInteraction) {
  const VehicleState s = sample_state();
  const CoupledRate full = full_dynamics(s, kInput, kSlip, {});
  const PoseRate t = tractor_subsystem_dynamics(s.tractor(), kInput.delta_t, kSlip, s.v, {});
  const PoseRate i = trailer_subsystem_dynamics(s.trailer(), kInput.delta_i, s.beta, kSlip, s.v, {});
  EXPECT_EQ(full.head<3>(), t);
  EXPECT_DOUBLE_EQ(full(3), i(0));
  EXPECT_DOUBLE_EQ(full(4), i(1));
  EXPECT_DOUBLE_EQ(full(5), i(2) + interaction_term(s, kInput, kSlip, {}));
}

TEST(VehicleModel, InteractionVanishesWithoutTractorSteering) {
  EXPECT_EQ(interaction_term(sample_state(), {0.0, 0.3}, kSlip, {}), 0.0);
}

TEST(VehicleModel, StraightDrivingKeepsHeading) {
  VehicleState s;
  s.v = 1.0;
  const VehicleState n = rk4_step(s, {0.0, 0.0}, {1.0, 1.0, 1.0}, {}, 0.2);
  EXPECT_NEAR(n.x_t, 0.2, 1e-15);
  EXPECT_NEAR(n.x_i, 0.2, 1e-15);
  EXPECT_EQ(n.theta, 0.0);
  EXPECT_EQ(n.psi, 0.0);
}

TEST(VehicleModel, ConstantSteeringTracesExactCircle) {
  // Tractor rows alone have the closed-form solution of a circle of radius L/tan(delta).
  const double delta = 0.2, L = 1.4, R = L / std::tan(delta);
  Pose p{0.0, 0.0, 0.0};
  const double dt = 0.01;
  for (int k = 0; k < 500; ++k)
    p = rk4_step([&](const Pose& x) { return tractor_subsystem_dynamics(x, delta, {1.0, 1.0, 1.0}, 1.0, {}); }, p, dt);
  const double th = 5.0 / R;
  EXPECT_NEAR(p(0), R * std::sin(th), 1e-9);
  EXPECT_NEAR(p(1), R * (1.0 - std::cos(th)), 1e-9);
  EXPECT_NEAR(p(2), th, 1e-12);
}

TEST(VehicleModel, Rk4ConvergesWithOrderFour) {
  const VehicleState s0 = sample_state();
  const double T = 2.0;
  auto integrate = [&](int n) {
    VehicleState s = s0;
    for (int k = 0; k < n; ++k) s = rk4_step(s, kInput, kSlip, {}, T / n);
    return s.poses();
  };
  const auto ref = integrate(20000);
  const double e1 = (integrate(10) - ref).norm();
  const double e2 = (integrate(20) - ref).norm();
  const double e3 = (integrate(40) - ref).norm();
  const double slope1 = std::log2(e1 / e2), slope2 = std::log2(e2 / e3);
  EXPECT_NEAR(slope1, 4.0, 0.3);
  EXPECT_NEAR(slope2, 4.0, 0.3);
}

TEST(VehicleModel, SteeringLimitsClampAndAdmit) {
  const SteeringLimits lim;
  const ControlInput c = lim.clamp({deg2rad(35.0), -deg2rad(25.0)});
  EXPECT_DOUBLE_EQ(c.delta_t, deg2rad(30.0));
  EXPECT_DOUBLE_EQ(c.delta_i, -deg2rad(20.0));
  EXPECT_TRUE(lim.admits(c, 0.0));
  EXPECT_FALSE(lim.admits({deg2rad(30.01), 0.0}, 0.0));
}

TEST(VehicleModel, GeometryRejectsNonPositiveLengths) {
  VehicleGeometry g;
  g.trailer_length = 0.0;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}
