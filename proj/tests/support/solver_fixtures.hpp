#pragma once

// Reference problems and an independent box-QP oracle shared by the solver
// unit tests and the acceptance binary.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ttmpc/rti_solver.hpp"
#include "ttmpc/vehicle_model.hpp"

namespace ttmpc::fixtures {

/// Projected gradient descent with step 1/lambda_max, run to a fixed point.
inline Eigen::VectorXd projected_gradient(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::VectorXd& lb,
                                   const Eigen::VectorXd& ub) {
  const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(g.size()).cwiseMax(lb).cwiseMin(ub);
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd next = (z - (H * z + g) / L).cwiseMax(lb).cwiseMin(ub);
    if ((next - z).lpNorm<Eigen::Infinity>() < 1e-15) return next;
    z = next;
  }
  return z;
}

struct RandomQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd g, lb, ub;
};

inline RandomQp random_qp(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  RandomQp q;
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
  q.H = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  q.g.resize(n), q.lb.resize(n), q.ub.resize(n);
  for (int i = 0; i < n; ++i) {
    q.g(i) = 5.0 * nd(rng);
    q.lb(i) = -0.2 - std::abs(nd(rng));
    q.ub(i) = 0.2 + std::abs(nd(rng));
  }
  return q;
}

// Tractor kinematics tracking a curved reference, the control OCP shape.
inline OcpProblem tracking_problem(int N = 12) {
  OcpProblem pb;
  pb.horizon = N, pb.nx = 3, pb.nu = 1, pb.np = 0, pb.dt = 0.2;
  pb.ode = [](const Vector& x, const Vector& u, const Vector&) {
    return Vector(tractor_subsystem_dynamics(x, u(0), {0.9, 0.9, 0.9}, 1.0, {}));
  };
  pb.stage_residual = [](int k, const Vector& x, const Vector& u, const Vector&) {
    const double s = 0.2 * (k + 1) + 1.6;
    Vector r(3);
    r << x(0) - 8.0 * std::sin(s / 8.0), x(1) - 8.0 * (1.0 - std::cos(s / 8.0)), std::sqrt(10.0) * u(0);
    return r;
  };
  pb.stage_weight = Matrix::Identity(3, 3);
  pb.terminal_residual = [N](const Vector& x, const Vector&) {
    const double s = 0.2 * N + 1.6;
    Vector r(2);
    r << x(0) - 8.0 * std::sin(s / 8.0), x(1) - 8.0 * (1.0 - std::cos(s / 8.0));
    return r;
  };
  pb.terminal_weight = 10.0 * Matrix::Identity(2, 2);
  pb.u_min = Vector::Constant(1, -deg2rad(30.0));
  pb.u_max = Vector::Constant(1, deg2rad(30.0));
  return pb;
}

// Estimation-shaped problem: free initial state, slip-like parameter, arrival cost.
inline OcpProblem estimation_problem() {
  OcpProblem pb;
  pb.horizon = 8, pb.nx = 3, pb.nu = 1, pb.np = 1, pb.dt = 0.2;
  pb.initial = InitialCondition::arrival_cost;
  pb.ode = [](const Vector& x, const Vector& u, const Vector& p) {
    return Vector(tractor_subsystem_dynamics(x, u(0), {p(0), 1.0, 1.0}, 1.0, {}));
  };
  pb.stage_residual = [](int k, const Vector& x, const Vector& u, const Vector&) {
    Vector r(3);
    r << (x(0) - 0.19 * k) / 0.03, (x(1) - 0.01 * k * k) / 0.03, (u(0) - 0.1) / 0.0175;
    return r;
  };
  pb.stage_weight = Matrix::Identity(3, 3);
  pb.p_min = Vector::Constant(1, 0.25);
  pb.p_max = Vector::Constant(1, 1.0);
  pb.arrival_reference = Vector::Zero(4);
  pb.arrival_reference(3) = 0.7;
  pb.arrival_weight = Vector::Constant(4, 4.0).asDiagonal();
  return pb;
}

inline OcpSolution guess(const OcpProblem& pb, double u0, const Vector& x0, const Vector& p) {
  return simulate_guess(pb, x0, std::vector<Vector>(pb.horizon, Vector::Constant(pb.nu, u0)), p);
}

}  // namespace ttmpc::fixtures
