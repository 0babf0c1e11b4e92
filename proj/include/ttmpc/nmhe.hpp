#pragma once

// Moving horizon estimation of the tractor-trailer pose, hitch angle, speed and
// slip coefficients, with an EKF-style arrival cost.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttmpc/rti_solver.hpp"
#include "ttmpc/vehicle_model.hpp"

namespace ttmpc {

/// One synchronous sensor sample: GNSS positions, hitch angle, wheel speed and
/// both steering angles.
struct MeasurementSample {
  double t{0.0};
  double x_t{0.0}, y_t{0.0};
  double x_i{0.0}, y_i{0.0};
  double beta{0.0};
  double v{0.0};
  double delta_t{0.0};
  double delta_i{0.0};

  using Vec = Eigen::Matrix<double, 8, 1>;
  [[nodiscard]] Vec vec() const {
    Vec y;
    y << x_t, y_t, x_i, y_i, beta, v, delta_t, delta_i;
    return y;
  }
  [[nodiscard]] bool finite() const { return vec().allFinite() && std::isfinite(t); }
  bool operator==(const MeasurementSample&) const = default;
};

/// FIFO window of the most recent samples.
class MeasurementBuffer {
 public:
  explicit MeasurementBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 2) throw std::invalid_argument("measurement buffer needs room for at least two samples");
  }

  /// Appends a sample; returns true when the oldest sample was evicted.
  bool push(const MeasurementSample& y) {
    if (!y.finite()) throw std::invalid_argument("measurement contains non-finite values");
    if (!samples_.empty() && !(y.t > samples_.back().t))
      throw std::invalid_argument("measurement timestamp " + std::to_string(y.t) + " is not newer than " +
                                  std::to_string(samples_.back().t));
    samples_.push_back(y);
    if (samples_.size() > capacity_) {
      samples_.pop_front();
      return true;
    }
    return false;
  }

  [[nodiscard]] std::size_t size() const { return samples_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] bool full() const { return samples_.size() == capacity_; }
  [[nodiscard]] bool empty() const { return samples_.empty(); }
  [[nodiscard]] const MeasurementSample& operator[](std::size_t i) const { return samples_[i]; }
  [[nodiscard]] const MeasurementSample& front() const { return samples_.front(); }
  [[nodiscard]] const MeasurementSample& back() const { return samples_.back(); }

 private:
  std::size_t capacity_;
  std::deque<MeasurementSample> samples_;
};

/// Quadratic prior on [window-start state; parameters].
struct ArrivalCost {
  Vector reference;
  Matrix weight;
};

/// Which measured steering samples stand for the input held over [t_k, t_k+1].
enum class SteeringPairing {
  interval_end,  // sample k+1
  interval_mean  // mean of samples k and k+1 (better under actuator lag)
};

enum class HitchModel {
  random_walk,  // beta' = 0 inside the window
  articulation  // beta' = theta' - psi'
};

struct NmheConfig {
  int window{10};  // samples
  double dt{0.2};
  // Standard deviations for x_t, y_t, x_i, y_i, beta, v, delta_t, delta_i.
  Eigen::Matrix<double, 8, 1> measurement_sd{
      (Eigen::Matrix<double, 8, 1>() << 0.03, 0.03, 0.03, 0.03, 0.0175, 0.1, 0.0175, 0.0175).finished()};
  // Arrival-cost process noise (standard deviations) for the eight states
  // (x_t, y_t, theta, x_i, y_i, psi, beta, v) and the slip parameters.
  Eigen::Matrix<double, 8, 1> state_process_sd{
      (Eigen::Matrix<double, 8, 1>() << 10.0, 10.0, 0.1, 10.0, 10.0, 0.1, 0.1745, 0.1).finished()};
  Eigen::Vector3d param_process_sd{0.25, 0.25, 0.25};
  double param_min{0.25};
  double param_max{1.0};
  double initial_param{0.7};
  double initial_information{1e2};
  HitchModel hitch_model{HitchModel::random_walk};
  SteeringPairing steering_pairing{SteeringPairing::interval_end};
  bool arrival_cost{true};
  SteeringLimits limits{};
};

struct EstimatorOutput {
  VehicleState state;
  SlipParams slip;
  double solve_seconds{0.0};
  bool stale{false};
  int window{0};
};

inline constexpr int kEstStates = 8;
inline constexpr int kEstParams = 3;
inline constexpr int kEstInputs = 2;

/// Information-form arrival cost update: fold the window-start residuals into
/// the prior, propagate the covariance through the first shooting interval
/// (x1 = f(x0, u0, p), p unchanged) and inflate it by the process noise.
///   Sigma0 = (P + J0' W0 J0)^-1
///   Sigma1 = Phi Sigma0 Phi' + Gamma Su Gamma' + diag(sd^2)
///   P1     = Sigma1^-1
/// Returns false (leaving `next` untouched) when P1 is not positive definite.
inline bool propagate_arrival_information(const Matrix& prior, const Matrix& J0, const Matrix& W0, const Matrix& Phi,
                                          const Matrix& Gamma, const Matrix& input_cov, const Vector& process_sd,
                                          Matrix& next) {
  const Eigen::Index n = prior.rows();
  Matrix info = prior;
  if (J0.size() > 0) info.noalias() += J0.transpose() * W0 * J0;
  Eigen::LDLT<Matrix> ldlt(info);
  if (ldlt.info() != Eigen::Success) return false;
  const Matrix sigma0 = ldlt.solve(Matrix::Identity(n, n));
  Matrix sigma1 = Phi * sigma0 * Phi.transpose();
  if (Gamma.size() > 0) sigma1.noalias() += Gamma * input_cov * Gamma.transpose();
  sigma1.diagonal() += process_sd.array().square().matrix();
  sigma1 = 0.5 * (sigma1 + sigma1.transpose());
  Eigen::LLT<Matrix> llt(sigma1);
  if (llt.info() != Eigen::Success) return false;
  Matrix p1 = llt.solve(Matrix::Identity(n, n));
  p1 = 0.5 * (p1 + p1.transpose());
  if (!p1.allFinite()) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p1, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) return false;
  next = std::move(p1);
  return true;
}

class MovingHorizonEstimator {
 public:
  MovingHorizonEstimator(NmheConfig cfg, VehicleGeometry geom)
      : cfg_(std::move(cfg)), geom_(geom), buffer_(static_cast<std::size_t>(cfg_.window)) {
    geom_.validate();
    if (cfg_.window < 2) throw std::invalid_argument("nmhe window must hold at least two samples");
    meas_weight_ = Matrix::Zero(6, 6);
    for (int i = 0; i < 6; ++i) meas_weight_(i, i) = 1.0 / cfg_.measurement_sd(i);
    stage_weight_ = Matrix::Zero(8, 8);
    for (int i = 0; i < 8; ++i) stage_weight_(i, i) = 1.0 / cfg_.measurement_sd(i);
    process_sd_ = Vector(kEstStates + kEstParams);
    process_sd_ << cfg_.state_process_sd, cfg_.param_process_sd;
  }

  /// Seeds the prior from the first sample; yaws come from outside (path tangent).
  EstimatorOutput initialize(const MeasurementSample& first, double tractor_yaw, double trailer_yaw) {
    buffer_ = MeasurementBuffer(static_cast<std::size_t>(cfg_.window));
    buffer_.push(first);
    Vector x0(kEstStates);
    x0 << first.x_t, first.y_t, tractor_yaw, first.x_i, first.y_i, trailer_yaw, first.beta, first.v;
    const Vector p0 = Vector::Constant(kEstParams, cfg_.initial_param);
    arrival_.reference = Vector(kEstStates + kEstParams);
    arrival_.reference << x0, p0;
    arrival_.weight = initial_weight();
    warm_ = OcpSolution{};
    warm_.x = {x0};
    warm_.p = p0;
    resets_ = 0;
    initialized_ = true;
    last_ = make_output(warm_, 0.0, false);
    return last_;
  }

  /// Pushes a sample, solves one RTI step and refreshes the arrival cost.
  EstimatorOutput update(const MeasurementSample& y) {
    if (!initialized_) throw std::logic_error("nmhe: initialize() must be called first");
    push_measurement(y);
    last_ = solve_nmhe();
    if (buffer_.full() && cfg_.arrival_cost) update_arrival_cost();
    return last_;
  }

  /// Adds a sample to the window and extends the warm start by one node.
  void push_measurement(const MeasurementSample& y) {
    const bool evicted = buffer_.push(y);
    Vector u(kEstInputs);
    u << y.delta_t, y.delta_i;
    u = u.cwiseMax(input_min()).cwiseMin(input_max());
    if (evicted) {
      warm_ = shift_warm_start(warm_);
      warm_.u.back() = u;
      warm_.x.back() = integrate(warm_.x[warm_.x.size() - 2], u, warm_.p);
      if (cfg_.arrival_cost && pending_) {
        arrival_ = *pending_;
      } else if (!cfg_.arrival_cost) {
        arrival_.reference << warm_.x.front(), warm_.p;
      }
      pending_.reset();
    } else {
      warm_.u.push_back(u);
      warm_.x.push_back(integrate(warm_.x.back(), u, warm_.p));
    }
  }

  /// Builds the least-squares problem over the current window.
  [[nodiscard]] OcpProblem build_problem() const {
    OcpProblem pb;
    pb.horizon = static_cast<int>(buffer_.size()) - 1;
    pb.nx = kEstStates;
    pb.nu = kEstInputs;
    pb.np = kEstParams;
    pb.dt = cfg_.dt;
    const VehicleGeometry geom = geom_;
    const HitchModel hitch = cfg_.hitch_model;
    pb.ode = [geom, hitch](const Vector& x, const Vector& u, const Vector& p) { return model_rate(x, u, p, geom, hitch); };
    auto meas = std::make_shared<std::vector<MeasurementSample::Vec>>();
    for (std::size_t i = 0; i < buffer_.size(); ++i) meas->push_back(buffer_[i].vec());
    const bool mean = cfg_.steering_pairing == SteeringPairing::interval_mean;
    pb.stage_residual = [meas, mean](int k, const Vector& x, const Vector& u, const Vector&) {
      const auto& yk = (*meas)[static_cast<std::size_t>(k)];
      const auto& yk1 = (*meas)[static_cast<std::size_t>(k) + 1];
      const Eigen::Vector2d steer = mean ? Eigen::Vector2d(0.5 * (yk.tail<2>() + yk1.tail<2>())) : Eigen::Vector2d(yk1.tail<2>());
      Vector r(8);
      r << x(0) - yk(0), x(1) - yk(1), x(3) - yk(2), x(4) - yk(3), x(6) - yk(4), x(7) - yk(5), u(0) - steer(0),
          u(1) - steer(1);
      return r;
    };
    pb.stage_weight = stage_weight_;
    pb.terminal_residual = [meas](const Vector& x, const Vector&) {
      const auto& y = meas->back();
      Vector r(6);
      r << x(0) - y(0), x(1) - y(1), x(3) - y(2), x(4) - y(3), x(6) - y(4), x(7) - y(5);
      return r;
    };
    pb.terminal_weight = meas_weight_;
    pb.u_min = input_min();
    pb.u_max = input_max();
    pb.p_min = Vector::Constant(kEstParams, cfg_.param_min);
    pb.p_max = Vector::Constant(kEstParams, cfg_.param_max);
    pb.initial = InitialCondition::arrival_cost;
    pb.arrival_reference = arrival_.reference;
    pb.arrival_weight = cfg_.arrival_cost ? arrival_.weight : Matrix::Zero(kEstStates + kEstParams, kEstStates + kEstParams);
    return pb;
  }

  /// One Gauss-Newton step over the window; returns the newest-node estimate.
  EstimatorOutput solve_nmhe() {
    if (buffer_.size() < 2) return make_output(warm_, 0.0, false);
    const OcpProblem pb = build_problem();
    const PreparedQp qp = solver_.prepare(pb, warm_);
    OcpSolution sol = solver_.feedback(qp);
    const double seconds = sol.prep_seconds + sol.feedback_seconds;
    if (!sol.stale) warm_ = sol;
    for (Eigen::Index i = 0; i < warm_.p.size(); ++i)
      if (warm_.p(i) < cfg_.param_min || warm_.p(i) > cfg_.param_max)
        throw std::logic_error("nmhe: slip estimate left its bounds");
    return make_output(warm_, seconds, sol.stale);
  }

  /// Replaces the pending arrival cost with the prior for the next window start
  /// (current node 1). Falls back to the initial prior when positive
  /// definiteness is lost.
  void update_arrival_cost() {
    if (warm_.x.size() < 2) return;
    const int n = kEstStates + kEstParams;
    const Vector& x0 = warm_.x[0];
    const Vector& u0 = warm_.u[0];
    const Vector& p = warm_.p;

    Vector v(kEstStates + kEstInputs + kEstParams);
    v << x0, u0, p;
    auto shoot = [&](const Vector& w) {
      return integrate(w.head(kEstStates), w.segment(kEstStates, kEstInputs), w.tail(kEstParams));
    };
    const Vector f0 = shoot(v);
    const Matrix J = detail::fd_jacobian(shoot, v, f0, 1e-6);

    Matrix Phi = Matrix::Identity(n, n);
    Phi.topLeftCorner(kEstStates, kEstStates) = J.leftCols(kEstStates);
    Phi.topRightCorner(kEstStates, kEstParams) = J.rightCols(kEstParams);
    Matrix Gamma = Matrix::Zero(n, kEstInputs);
    Gamma.topRows(kEstStates) = J.middleCols(kEstStates, kEstInputs);
    Matrix input_cov = Matrix::Zero(kEstInputs, kEstInputs);
    for (int i = 0; i < kEstInputs; ++i) input_cov(i, i) = 1.0 / stage_weight_(6 + i, 6 + i);

    // Window-start measurement rows: positions, hitch angle, speed.
    Matrix J0 = Matrix::Zero(6, n);
    const int measured[6] = {0, 1, 3, 4, 6, 7};
    for (int r = 0; r < 6; ++r) J0(r, measured[r]) = 1.0;

    Matrix next;
    ArrivalCost ac;
    ac.reference = Vector(n);
    ac.reference << warm_.x[1], p;
    if (propagate_arrival_information(arrival_.weight, J0, meas_weight_, Phi, Gamma, input_cov, process_sd_, next)) {
      ac.weight = std::move(next);
    } else {
      ac.weight = initial_weight();
      ++resets_;
    }
    pending_ = std::move(ac);
  }

  [[nodiscard]] const MeasurementBuffer& buffer() const { return buffer_; }
  [[nodiscard]] const ArrivalCost& arrival() const { return arrival_; }
  [[nodiscard]] const ArrivalCost* pending_arrival() const { return pending_ ? &*pending_ : nullptr; }
  [[nodiscard]] int arrival_resets() const { return resets_; }
  [[nodiscard]] const OcpSolution& solution() const { return warm_; }
  [[nodiscard]] const EstimatorOutput& last() const { return last_; }
  [[nodiscard]] const NmheConfig& config() const { return cfg_; }
  [[nodiscard]] const RtiSolver& solver() const { return solver_; }
  [[nodiscard]] Matrix initial_weight() const {
    return cfg_.initial_information * Matrix::Identity(kEstStates + kEstParams, kEstStates + kEstParams);
  }

  /// Estimator model: coupled kinematics plus hitch-angle and speed states.
  static Vector model_rate(const Vector& x, const Vector& u, const Vector& p, const VehicleGeometry& geom,
                           HitchModel hitch) {
    VehicleState s;
    s.x_t = x(0), s.y_t = x(1), s.theta = x(2), s.x_i = x(3), s.y_i = x(4), s.psi = x(5), s.beta = x(6), s.v = x(7);
    const SlipParams slip{p(0), p(1), p(2)};
    const CoupledRate r = full_dynamics(s, {u(0), u(1)}, slip, geom);
    Vector out(kEstStates);
    out.head<6>() = r;
    out(6) = hitch == HitchModel::articulation ? r(2) - r(5) : 0.0;
    out(7) = 0.0;
    return out;
  }

 private:
  [[nodiscard]] Vector integrate(const Vector& x, const Vector& u, const Vector& p) const {
    const VehicleGeometry geom = geom_;
    const HitchModel hitch = cfg_.hitch_model;
    return rk4_step([&](const Vector& s) { return model_rate(s, u, p, geom, hitch); }, x, cfg_.dt);
  }
  [[nodiscard]] Vector input_min() const { return Eigen::Vector2d(-cfg_.limits.tractor, -cfg_.limits.trailer); }
  [[nodiscard]] Vector input_max() const { return Eigen::Vector2d(cfg_.limits.tractor, cfg_.limits.trailer); }

  [[nodiscard]] EstimatorOutput make_output(const OcpSolution& sol, double seconds, bool stale) const {
    const Vector& x = sol.x.back();
    EstimatorOutput out;
    out.state = {x(0), x(1), x(2), x(3), x(4), x(5), x(6), x(7)};
    out.slip = {sol.p(0), sol.p(1), sol.p(2)};
    out.solve_seconds = seconds;
    out.stale = stale;
    out.window = static_cast<int>(buffer_.size());
    return out;
  }

  NmheConfig cfg_;
  VehicleGeometry geom_;
  MeasurementBuffer buffer_;
  Matrix meas_weight_;
  Matrix stage_weight_;
  Vector process_sd_;
  ArrivalCost arrival_;
  std::optional<ArrivalCost> pending_;
  OcpSolution warm_;
  EstimatorOutput last_;
  RtiSolver solver_;
  int resets_{0};
  bool initialized_{false};
};

}  // namespace ttmpc
