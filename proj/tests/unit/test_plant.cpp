#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "ttmpc/plant.hpp"

using namespace ttmpc;

namespace {

PlantState moving() {
  PlantState s;
  s.vehicle.x_t = 2.4;
  s.vehicle.v = 1.0;
  return s;
}

}  // namespace

TEST(Sensor, SteeringQuantizedToOneDegree) {
  EXPECT_NEAR(quantize(deg2rad(10.4), deg2rad(1.0)), deg2rad(10.0), 1e-15);
  EXPECT_NEAR(quantize(deg2rad(-10.6), deg2rad(1.0)), deg2rad(-11.0), 1e-15);
  EXPECT_EQ(quantize(0.123, 0.0), 0.123);
}

TEST(Sensor, NoiseStatisticsMatchConfiguration) {
  SensorNoise noise;
  noise.steering_resolution = 0.0;
  PlantState truth = moving();
  truth.vehicle.beta = 0.1;
  std::mt19937_64 rng(99);
  const int n = 100000;
  Eigen::Matrix<double, 8, 1> sum = Eigen::Matrix<double, 8, 1>::Zero(), sq = sum;
  const Eigen::Matrix<double, 8, 1> ref = sense(0.0, truth, SensorNoise{0, 0, 0, 0, 0, 0, 0, 0, 0}, rng).vec();
  for (int i = 0; i < n; ++i) {
    const Eigen::Matrix<double, 8, 1> e = sense(0.0, truth, noise, rng).vec() - ref;
    sum += e;
    sq += e.cwiseProduct(e);
  }
  const Eigen::Matrix<double, 8, 1> sd = noise.sd();
  for (int c = 0; c < 8; ++c) {
    const double mean = sum(c) / n;
    const double stdev = std::sqrt(sq(c) / n - mean * mean);
    EXPECT_LE(std::abs(mean), 5.0 * sd(c) / std::sqrt(static_cast<double>(n))) << "channel " << c;
    EXPECT_NEAR(stdev / sd(c), 1.0, 0.02) << "channel " << c;
  }
}

TEST(Sensor, DrawOrderIndependentOfZeroChannels) {
  SensorNoise a, b;
  b.beta = 0.0;
  std::mt19937_64 ra(5), rb(5);
  for (int i = 0; i < 10; ++i) {
    const MeasurementSample ya = sense(0.2 * i, moving(), a, ra);
    const MeasurementSample yb = sense(0.2 * i, moving(), b, rb);
    EXPECT_EQ(ya.x_t, yb.x_t);
    EXPECT_EQ(ya.v, yb.v);
    EXPECT_EQ(yb.beta, 0.0);
  }
}

TEST(Plant, CommandsSaturateAtSteeringLimits) {
  PlantConfig cfg;
  cfg.steering_lag = 0.0;
  const PlantState next = step_plant(moving(), {deg2rad(35.0), -deg2rad(35.0)}, {}, 0.2, {}, cfg);
  EXPECT_DOUBLE_EQ(next.actuator.delta_t, deg2rad(30.0));
  EXPECT_DOUBLE_EQ(next.actuator.delta_i, -deg2rad(20.0));
}

TEST(Plant, SteeringLagIsFirstOrder) {
  PlantConfig cfg;
  cfg.substeps = 50;
  const PlantState next = step_plant(moving(), {0.2, 0.1}, {}, cfg.steering_lag, {}, cfg);
  EXPECT_NEAR(next.actuator.delta_t, 0.2 * (1.0 - std::exp(-1.0)), 1e-8);
  EXPECT_NEAR(next.actuator.delta_i, 0.1 * (1.0 - std::exp(-1.0)), 1e-8);
}

TEST(Plant, SpeedApproachesCommand) {
  PlantConfig cfg;
  PlantState s = moving();
  s.vehicle.v = 0.0;
  const PlantState next = step_plant(s, {}, {}, 0.5, {}, cfg);
  EXPECT_NEAR(next.vehicle.v, 1.0 - std::exp(-1.0), 1e-6);
}

TEST(Plant, HitchAngleFollowsYawDifference) {
  PlantConfig cfg;
  cfg.steering_lag = 0.0;
  const PlantState s0 = moving();
  const PlantState s1 = step_plant(s0, {0.3, -0.1}, {0.9, 0.9, 0.9}, 0.2, {}, cfg);
  const double d_beta = s1.vehicle.beta - s0.vehicle.beta;
  const double d_yaw = (s1.vehicle.theta - s0.vehicle.theta) - (s1.vehicle.psi - s0.vehicle.psi);
  EXPECT_NEAR(d_beta, d_yaw, 1e-12);
  EXPECT_NE(d_beta, 0.0);

  cfg.hitch_dynamics = false;
  EXPECT_EQ(step_plant(s0, {0.3, -0.1}, {}, 0.2, {}, cfg).vehicle.beta, 0.0);
}

TEST(Plant, DecouplingRemovesTractorInfluenceOnTrailer) {
  PlantConfig cfg;
  cfg.steering_lag = 0.0;
  cfg.coupling = false;
  cfg.hitch_dynamics = false;
  const PlantState a = step_plant(moving(), {0.3, 0.05}, {}, 0.2, {}, cfg);
  const PlantState b = step_plant(moving(), {-0.3, 0.05}, {}, 0.2, {}, cfg);
  EXPECT_EQ(a.vehicle.psi, b.vehicle.psi);
  cfg.coupling = true;
  EXPECT_NE(step_plant(moving(), {0.3, 0.05}, {}, 0.2, {}, cfg).vehicle.psi,
            step_plant(moving(), {-0.3, 0.05}, {}, 0.2, {}, cfg).vehicle.psi);
}

TEST(Plant, NonFiniteStateRaises) {
  EXPECT_THROW(step_plant(moving(), {std::numeric_limits<double>::quiet_NaN(), 0.0}, {}, 0.2, {}, PlantConfig{}),
               PlantError);
}

TEST(Plant, SlipProfileDrops) {
  SlipProfile p;
  p.drop_time = 10.0;
  EXPECT_EQ(p.at(9.99).mu, 0.9);
  EXPECT_EQ(p.at(10.0).mu, 0.6);
  SlipProfile constant;
  EXPECT_EQ(constant.at(1e6).eta, 0.9);
}
