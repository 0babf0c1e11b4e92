#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ttmpc/denmpc.hpp"
#include "ttmpc/trajectory.hpp"

using namespace ttmpc;

namespace {

ReferenceWindow straight_refs(double x0, double y_ref, int N) {
  ReferenceWindow w;
  for (int k = 0; k <= N; ++k) {
    w.tractor.emplace_back(x0 + 1.6 + 0.2 * k, y_ref, 0.0);
    w.trailer.emplace_back(x0 - 0.8 + 0.2 * k, y_ref, 0.0);
  }
  return w;
}

VehicleState state_at(double x, double y) {
  VehicleState s;
  s.x_t = x, s.y_t = y;
  s.x_i = x - 2.4, s.y_i = y;
  s.v = 1.0;
  return s;
}

}  // namespace

TEST(Weights, FactorReproducesSemidefiniteWeight) {
  const Matrix Q = Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal();
  const Matrix L = detail::psd_factor(Q);
  EXPECT_LE((L.transpose() * L - Q).norm(), 1e-15);
  Matrix F(3, 3);
  F << 2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.5;
  const Matrix Lf = detail::psd_factor(F);
  EXPECT_LE((Lf.transpose() * Lf - F).norm(), 1e-12);
}

TEST(Weights, RejectsNegativeOrZeroInputWeight) {
  ControllerWeights w;
  w.R = 0.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(Tube, FeedbackUsesWrappedYawError) {
  NominalState nom;
  nom.x = Pose(0.0, 0.0, std::numbers::pi - 0.05);
  const Pose est(1.0, 2.0, -std::numbers::pi + 0.05);  // 0.1 rad ahead across the cut
  EXPECT_NEAR(tube_feedback(nom, est, TubeGain{}), -0.3, 1e-12);
}

TEST(Tube, CorrectionSaturatesAtBound) {
  NominalState nom;
  const Pose est(0.0, 0.0, -1.0);
  EXPECT_DOUBLE_EQ(tube_correction(nom, est, 0.1, TubeGain{}, deg2rad(20.0)), deg2rad(20.0));
}

TEST(Tube, ZeroWhenEstimateFollowsNominal) {
  // Plant identical to the nominal model: propagating the estimate with the
  // nominal input reproduces the nominal prediction exactly.
  const VehicleGeometry geom;
  const SlipParams slip{0.9, 0.9, 0.9};
  const NominalState n0{Pose(1.0, 2.0, 0.3), 0.0};
  const NominalState pred = propagate_tractor_nominal(n0, 0.2, slip, 1.0, geom, 0.2);
  const Pose actual = rk4_step([&](const Pose& x) { return tractor_subsystem_dynamics(x, 0.2, slip, 1.0, geom); },
                               n0.x, 0.2);
  EXPECT_EQ(tube_feedback(pred, actual, TubeGain{}), 0.0);
  EXPECT_DOUBLE_EQ(pred.t, 0.2);
}

TEST(Decentralized, TractorCommandIgnoresTrailerState) {
  NmpcConfig cfg;
  DecentralizedController a(cfg, VehicleGeometry{}, TubeGain{}, true);
  DecentralizedController b(cfg, VehicleGeometry{}, TubeGain{}, true);
  const SlipParams slip{0.9, 0.9, 0.9};
  for (int k = 0; k < 10; ++k) {
    VehicleState sa = state_at(0.2 * k, 0.3 - 0.02 * k);
    VehicleState sb = sa;
    sb.y_i += 0.4, sb.psi = 0.2, sb.beta = -0.1;  // only trailer quantities differ
    ReferenceWindow wa = straight_refs(0.2 * k, 0.0, cfg.horizon);
    ReferenceWindow wb = wa;
    for (Pose& p : wb.trailer) p(1) += 0.5;
    wb.delta_i_ref = 0.1;
    const ControllerCommand ca = a.step(0.2 * k, sa, slip, wa);
    const ControllerCommand cb = b.step(0.2 * k, sb, slip, wb);
    EXPECT_EQ(ca.nominal.delta_t, cb.nominal.delta_t) << "step " << k;
    EXPECT_EQ(ca.applied.delta_t, cb.applied.delta_t) << "step " << k;
    EXPECT_NE(ca.nominal.delta_i, cb.nominal.delta_i);
  }
}

TEST(Decentralized, SteersTowardsThePath) {
  NmpcConfig cfg;
  TractorNmpc tractor(cfg, VehicleGeometry{});
  const auto w = straight_refs(0.0, 0.0, cfg.horizon);
  const NmpcResult left = tractor.solve(Pose(0.0, 0.5, 0.0), w.tractor, 0.0, {0.9, 0.9, 0.9}, 1.0);
  const NmpcResult right = tractor.solve(Pose(0.0, -0.5, 0.0), w.tractor, 0.0, {0.9, 0.9, 0.9}, 1.0);
  EXPECT_LT(left.input(0), 0.0);
  EXPECT_GT(right.input(0), 0.0);
  EXPECT_EQ(left.predicted.size(), static_cast<std::size_t>(cfg.horizon + 1));
}

TEST(Decentralized, NominalInputsRespectLimits) {
  NmpcConfig cfg;
  DecentralizedController c(cfg, VehicleGeometry{}, TubeGain{}, true);
  const VehicleState s = state_at(0.0, 5.0);  // far off the path: inputs saturate
  const ControllerCommand cmd = c.step(0.0, s, {0.9, 0.9, 0.9}, straight_refs(0.0, 0.0, cfg.horizon));
  EXPECT_LE(std::abs(cmd.nominal.delta_t), cfg.limits.tractor + 1e-12);
  EXPECT_LE(std::abs(cmd.nominal.delta_i), cfg.limits.trailer + 1e-12);
  EXPECT_TRUE(cfg.limits.admits(cmd.applied, 0.0));
}

TEST(Decentralized, TubeDisabledAppliesNominal) {
  NmpcConfig cfg;
  DecentralizedController c(cfg, VehicleGeometry{}, TubeGain{}, false);
  for (int k = 0; k < 3; ++k) {
    const ControllerCommand cmd = c.step(0.2 * k, state_at(0.2 * k, 0.3), {0.9, 0.9, 0.9},
                                         straight_refs(0.2 * k, 0.0, cfg.horizon));
    EXPECT_EQ(cmd.applied, cfg.limits.clamp(cmd.nominal));
    EXPECT_EQ(cmd.tube_corr_t, 0.0);
  }
}

TEST(Centralized, SolvesCoupledProblemWithinLimits) {
  NmpcConfig cfg;
  CentralizedNmpc c(cfg, VehicleGeometry{});
  const VehicleState s = state_at(0.0, 0.4);
  const NmpcResult r = c.solve(s.poses(), straight_refs(0.0, 0.0, cfg.horizon), {0.9, 0.9, 0.9}, 0.0, 1.0);
  ASSERT_EQ(r.input.size(), 2);
  EXPECT_LT(r.input(0), 0.0);
  EXPECT_LE(std::abs(r.input(0)), cfg.limits.tractor + 1e-12);
  EXPECT_LE(std::abs(r.input(1)), cfg.limits.trailer + 1e-12);
  EXPECT_FALSE(r.stale);
}
