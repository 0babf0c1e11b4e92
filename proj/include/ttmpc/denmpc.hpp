#pragma once

// Decentralized tracking NMPC for the tractor and the trailer with a linear
// tube (ancillary) feedback, and a centralized NMPC over the coupled model.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ttmpc/angles.hpp"
#include "ttmpc/rti_solver.hpp"
#include "ttmpc/trajectory.hpp"
#include "ttmpc/vehicle_model.hpp"

namespace ttmpc {

struct ControllerWeights {
  Eigen::Matrix3d Q{Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal()};
  double R{10.0};
  Eigen::Matrix3d S{Eigen::Vector3d(10.0, 10.0, 0.0).asDiagonal()};

  void validate() const {
    auto psd = [](const Eigen::Matrix3d& m) {
      if (!m.isApprox(m.transpose())) return false;
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m);
      return eig.eigenvalues().minCoeff() >= -1e-12 && m(0, 0) > 0.0 && m(1, 1) > 0.0;
    };
    if (!psd(Q) || !psd(S)) throw std::invalid_argument("controller weights: Q and S must be PSD with positive position entries");
    if (!(R > 0.0)) throw std::invalid_argument("controller weights: R must be positive");
  }
};

/// Ancillary gain mapping the (x, y, yaw) error to a steering correction.
struct TubeGain {
  Eigen::RowVector3d K{0.0, 0.0, -3.0};
};

struct NominalState {
  Pose x{Pose::Zero()};
  double t{0.0};
};

struct NmpcConfig {
  int horizon{15};
  double dt{0.2};
  ControllerWeights weights{};
  SteeringLimits limits{};
};

struct NmpcResult {
  Vector input;                    // first nominal input
  std::vector<Vector> predicted;   // N+1 predicted states
  bool stale{false};
  double prep_seconds{0.0};
  double feedback_seconds{0.0};
  double kkt{0.0};
  [[nodiscard]] double overall_seconds() const { return prep_seconds + feedback_seconds; }
};

namespace detail {

/// Rows L with L'L = M for symmetric PSD M; zero-eigenvalue directions dropped.
inline Matrix psd_factor(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const double tol = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    if (eig.eigenvalues()(i) > tol) keep.push_back(i);
  Matrix L(static_cast<Eigen::Index>(keep.size()), m.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto i = keep[r];
    L.row(static_cast<Eigen::Index>(r)) = std::sqrt(eig.eigenvalues()(i)) * eig.eigenvectors().col(i).transpose();
  }
  // Keep diagonal weights as plain scaled selections.
  if (m.isDiagonal()) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (m(i, i) > tol) rows.push_back(i);
    L = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) L(static_cast<Eigen::Index>(r), rows[r]) = std::sqrt(m(rows[r], rows[r]));
  }
  return L;
}

inline Matrix block_diag(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

}  // namespace detail

/// Trajectory-tracking NMPC over a generic model: least-squares stage cost
/// |L_Q (x - x_ref)|^2 + |L_R (u - u_ref)|^2 and terminal |L_S (x - x_ref)|^2,
/// with the initial node pinned to the estimate. One RTI step per call.
class TrackingNmpc {
 public:
  TrackingNmpc(int nx, int nu, int horizon, double dt, Matrix state_factor, Matrix input_factor,
               Matrix terminal_factor, Vector u_min, Vector u_max)
      : nx_(nx), nu_(nu), horizon_(horizon), dt_(dt), Lq_(std::move(state_factor)), Lr_(std::move(input_factor)),
        Ls_(std::move(terminal_factor)), u_min_(std::move(u_min)), u_max_(std::move(u_max)) {
    if (horizon_ < 1) throw std::invalid_argument("nmpc horizon must be positive");
  }

  NmpcResult solve(OcpProblem::Ode ode, const Vector& estimate, const std::vector<Vector>& refs, const Vector& u_ref) {
    if (static_cast<int>(refs.size()) != horizon_ + 1) throw std::invalid_argument("nmpc: reference window length must be N+1");
    OcpProblem pb;
    pb.horizon = horizon_;
    pb.nx = nx_;
    pb.nu = nu_;
    pb.np = 0;
    pb.dt = dt_;
    pb.ode = std::move(ode);
    const NodeMatrix Lq = Lq_, Lr = Lr_, Ls = Ls_;
    const Vector uref = u_ref.cwiseMax(u_min_).cwiseMin(u_max_);
    auto r_refs = std::make_shared<std::vector<Vector>>(refs);
    pb.stage_residual = [Lq, Lr, uref, r_refs](int k, const Vector& x, const Vector& u, const Vector&) {
      Vector r(Lq.rows() + Lr.rows());
      r.head(Lq.rows()).noalias() = Lq * (x - (*r_refs)[static_cast<std::size_t>(k)]);
      r.tail(Lr.rows()).noalias() = Lr * (u - uref);
      return r;
    };
    pb.stage_weight = Matrix::Identity(Lq.rows() + Lr.rows(), Lq.rows() + Lr.rows());
    pb.terminal_residual = [Ls, r_refs](const Vector& x, const Vector&) {
      Vector r(Ls.rows());
      r.noalias() = Ls * (x - r_refs->back());
      return r;
    };
    pb.terminal_weight = Matrix::Identity(Ls.rows(), Ls.rows());
    pb.u_min = u_min_;
    pb.u_max = u_max_;
    pb.initial = InitialCondition::pinned;

    OcpSolution warm;
    if (warm_ && warm_->horizon() == horizon_) {
      warm = shift_warm_start(*warm_);
    } else {
      warm = simulate_guess(pb, estimate, std::vector<Vector>(static_cast<std::size_t>(horizon_), uref), Vector());
    }
    const PreparedQp qp = solver_.prepare(pb, warm);
    OcpSolution sol = solver_.feedback(qp, estimate);

    NmpcResult out;
    out.prep_seconds = sol.prep_seconds;
    out.feedback_seconds = sol.feedback_seconds;
    out.kkt = sol.kkt;
    out.stale = sol.stale;
    if (sol.stale) {
      // Hold the previous first input; the predicted trajectory stays as it was.
      out.input = warm_ ? warm_->u.front() : uref;
      out.predicted = warm.x;
      return out;
    }
    out.input = sol.u.front();
    out.predicted = sol.x;
    warm_ = std::move(sol);
    return out;
  }

  void reset() { warm_.reset(); }
  [[nodiscard]] const RtiSolver& solver() const { return solver_; }
  [[nodiscard]] const std::optional<OcpSolution>& warm_start() const { return warm_; }

 private:
  int nx_, nu_, horizon_;
  double dt_;
  NodeMatrix Lq_, Lr_, Ls_;  // bounded so residual products stay off the heap
  Vector u_min_, u_max_;
  RtiSolver solver_;
  std::optional<OcpSolution> warm_;
};

inline std::vector<Vector> to_vectors(const std::vector<Pose>& poses) {
  std::vector<Vector> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) out.emplace_back(p);
  return out;
}

/// Tractor NMPC on f_1 with slip and speed frozen over the horizon.
class TractorNmpc {
 public:
  TractorNmpc(const NmpcConfig& cfg, VehicleGeometry geom)
      : geom_(geom),
        nmpc_(3, 1, cfg.horizon, cfg.dt, detail::psd_factor(cfg.weights.Q),
              Matrix::Constant(1, 1, std::sqrt(cfg.weights.R)), detail::psd_factor(cfg.weights.S),
              Vector::Constant(1, -cfg.limits.tractor), Vector::Constant(1, cfg.limits.tractor)) {
    cfg.weights.validate();
  }

  NmpcResult solve(const Pose& estimate, const std::vector<Pose>& refs, double delta_ref, const SlipParams& slip,
                   double v) {
    const VehicleGeometry geom = geom_;
    auto ode = [geom, slip, v](const Vector& x, const Vector& u, const Vector&) {
      return Vector(tractor_subsystem_dynamics(x, u(0), slip, v, geom));
    };
    return nmpc_.solve(ode, estimate, to_vectors(refs), Vector::Constant(1, delta_ref));
  }

  TrackingNmpc& core() { return nmpc_; }

 private:
  VehicleGeometry geom_;
  TrackingNmpc nmpc_;
};

/// Trailer NMPC on f_2 with hitch angle, slip and speed frozen over the horizon.
class TrailerNmpc {
 public:
  TrailerNmpc(const NmpcConfig& cfg, VehicleGeometry geom)
      : geom_(geom),
        nmpc_(3, 1, cfg.horizon, cfg.dt, detail::psd_factor(cfg.weights.Q),
              Matrix::Constant(1, 1, std::sqrt(cfg.weights.R)), detail::psd_factor(cfg.weights.S),
              Vector::Constant(1, -cfg.limits.trailer), Vector::Constant(1, cfg.limits.trailer)) {
    cfg.weights.validate();
  }

  NmpcResult solve(const Pose& estimate, const std::vector<Pose>& refs, double delta_ref, const SlipParams& slip,
                   double beta, double v) {
    const VehicleGeometry geom = geom_;
    auto ode = [geom, slip, beta, v](const Vector& x, const Vector& u, const Vector&) {
      return Vector(trailer_subsystem_dynamics(x, u(0), beta, slip, v, geom));
    };
    return nmpc_.solve(ode, estimate, to_vectors(refs), Vector::Constant(1, delta_ref));
  }

  TrackingNmpc& core() { return nmpc_; }

 private:
  VehicleGeometry geom_;
  TrackingNmpc nmpc_;
};

/// Centralized NMPC on the full coupled model, weights stacked block-diagonally.
class CentralizedNmpc {
 public:
  CentralizedNmpc(const NmpcConfig& cfg, VehicleGeometry geom)
      : geom_(geom),
        nmpc_(6, 2, cfg.horizon, cfg.dt,
              detail::block_diag(detail::psd_factor(cfg.weights.Q), detail::psd_factor(cfg.weights.Q)),
              std::sqrt(cfg.weights.R) * Matrix::Identity(2, 2),
              detail::block_diag(detail::psd_factor(cfg.weights.S), detail::psd_factor(cfg.weights.S)),
              Eigen::Vector2d(-cfg.limits.tractor, -cfg.limits.trailer),
              Eigen::Vector2d(cfg.limits.tractor, cfg.limits.trailer)) {
    cfg.weights.validate();
  }

  NmpcResult solve(const Eigen::Matrix<double, 6, 1>& estimate, const ReferenceWindow& refs, const SlipParams& slip,
                   double beta, double v) {
    const VehicleGeometry geom = geom_;
    auto ode = [geom, slip, beta, v](const Vector& x, const Vector& u, const Vector&) {
      VehicleState s;
      s.set_poses(x);
      s.beta = beta;
      s.v = v;
      return Vector(full_dynamics(s, {u(0), u(1)}, slip, geom));
    };
    std::vector<Vector> stacked;
    stacked.reserve(refs.tractor.size());
    for (std::size_t k = 0; k < refs.tractor.size(); ++k) {
      Vector r(6);
      r << refs.tractor[k], refs.trailer[k];
      stacked.push_back(r);
    }
    return nmpc_.solve(ode, estimate, stacked, Eigen::Vector2d(refs.delta_t_ref, refs.delta_i_ref));
  }

  TrackingNmpc& core() { return nmpc_; }

 private:
  VehicleGeometry geom_;
  TrackingNmpc nmpc_;
};

/// K (estimate - nominal) with the yaw difference wrapped to (-pi, pi].
inline double tube_feedback(const NominalState& nominal, const Pose& estimate, const TubeGain& gain) {
  Pose err = estimate - nominal.x;
  err(2) = wrap_angle(err(2));
  return gain.K.dot(err);
}

/// Ancillary control law u = u_bar + K (x - x_bar), saturated at +-bound.
inline double tube_correction(const NominalState& nominal, const Pose& estimate, double nominal_input,
                              const TubeGain& gain, double bound) {
  return std::clamp(nominal_input + tube_feedback(nominal, estimate, gain), -bound, bound);
}

/// One RK4 step of a decoupled subsystem under the nominal input.
template <typename SubsystemRate>
NominalState propagate_nominal(const NominalState& nominal, SubsystemRate&& rate, double dt) {
  return {rk4_step([&](const Pose& x) { return Pose(rate(x)); }, nominal.x, dt), nominal.t + dt};
}

inline NominalState propagate_tractor_nominal(const NominalState& nominal, double delta_t, const SlipParams& slip,
                                              double v, const VehicleGeometry& geom, double dt) {
  return propagate_nominal(
      nominal, [&](const Pose& x) { return tractor_subsystem_dynamics(x, delta_t, slip, v, geom); }, dt);
}

inline NominalState propagate_trailer_nominal(const NominalState& nominal, double delta_i, double beta,
                                              const SlipParams& slip, double v, const VehicleGeometry& geom,
                                              double dt) {
  return propagate_nominal(
      nominal, [&](const Pose& x) { return trailer_subsystem_dynamics(x, delta_i, beta, slip, v, geom); }, dt);
}

struct ControllerCommand {
  ControlInput nominal;
  ControlInput applied;
  double tube_corr_t{0.0};
  double tube_corr_i{0.0};
  Pose nominal_t{Pose::Zero()};  // tube references used this step
  Pose nominal_i{Pose::Zero()};
  bool stale_t{false};
  bool stale_i{false};
  double prep_t{0.0}, fb_t{0.0};
  double prep_i{0.0}, fb_i{0.0};
};

/// Tractor and trailer controllers with the ancillary feedback. The tube error
/// is taken against the one-step-ahead nominal prediction made at the previous
/// sample, since the NMPC pins its initial node to the estimate.
class DecentralizedController {
 public:
  DecentralizedController(const NmpcConfig& cfg, VehicleGeometry geom, TubeGain gain, bool tube_enabled)
      : cfg_(cfg), geom_(geom), gain_(gain), tube_(tube_enabled), tractor_(cfg, geom), trailer_(cfg, geom) {}

  ControllerCommand step(double t, const VehicleState& est, const SlipParams& slip, const ReferenceWindow& refs) {
    ControllerCommand cmd;
    const NmpcResult rt = tractor_.solve(est.tractor(), refs.tractor, refs.delta_t_ref, slip, est.v);
    const NmpcResult ri = trailer_.solve(est.trailer(), refs.trailer, refs.delta_i_ref, slip, est.beta, est.v);
    cmd.nominal = {rt.input(0), ri.input(0)};
    cmd.stale_t = rt.stale, cmd.stale_i = ri.stale;
    cmd.prep_t = rt.prep_seconds, cmd.fb_t = rt.feedback_seconds;
    cmd.prep_i = ri.prep_seconds, cmd.fb_i = ri.feedback_seconds;

    cmd.applied = cfg_.limits.clamp(cmd.nominal);
    if (tube_ && nominal_t_ && nominal_i_) {
      cmd.applied.delta_t = tube_correction(*nominal_t_, est.tractor(), cmd.nominal.delta_t, gain_, cfg_.limits.tractor);
      cmd.applied.delta_i = tube_correction(*nominal_i_, est.trailer(), cmd.nominal.delta_i, gain_, cfg_.limits.trailer);
      cmd.nominal_t = nominal_t_->x;
      cmd.nominal_i = nominal_i_->x;
    } else {
      cmd.nominal_t = est.tractor();
      cmd.nominal_i = est.trailer();
    }
    cmd.tube_corr_t = cmd.applied.delta_t - cmd.nominal.delta_t;
    cmd.tube_corr_i = cmd.applied.delta_i - cmd.nominal.delta_i;

    nominal_t_ = propagate_tractor_nominal({est.tractor(), t}, cmd.nominal.delta_t, slip, est.v, geom_, cfg_.dt);
    nominal_i_ =
        propagate_trailer_nominal({est.trailer(), t}, cmd.nominal.delta_i, est.beta, slip, est.v, geom_, cfg_.dt);
    return cmd;
  }

  TractorNmpc& tractor() { return tractor_; }
  TrailerNmpc& trailer() { return trailer_; }

 private:
  NmpcConfig cfg_;
  VehicleGeometry geom_;
  TubeGain gain_;
  bool tube_;
  TractorNmpc tractor_;
  TrailerNmpc trailer_;
  std::optional<NominalState> nominal_t_;
  std::optional<NominalState> nominal_i_;
};

}  // namespace ttmpc
