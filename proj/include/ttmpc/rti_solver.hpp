#pragma once

// Direct multiple shooting for nonlinear least-squares optimal control,
// solved by one generalized Gauss-Newton step per call (real-time iteration).
//
// Node states s_0..s_N, inputs u_0..u_{N-1} and a parameter vector p are the
// decision variables. The step is computed from a QP condensed onto
//   z = [ds_0 (free initial state only); du_0 .. du_{N-1}; dp]
// with the linearised shooting gaps folded into the state expansion
//   ds_k = G_k z + T_k e + h_k,   e = x0_estimate - s_0 (pinned mode).
// Preparation linearises and condenses everything that does not depend on the
// fresh estimate; feedback injects e, solves the box QP and expands.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttmpc/box_qp.hpp"
#include "ttmpc/vehicle_model.hpp"

namespace ttmpc {

// Node-level vectors (states, inputs, parameters, residuals) live on the stack;
// condensed-QP vectors use Eigen::VectorXd.
inline constexpr int kMaxNodeSize = 32;
using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxNodeSize, 1>;
using NodeMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxNodeSize, kMaxNodeSize>;
using Matrix = Eigen::MatrixXd;

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int node) : std::runtime_error(what), node_(node) {}
  [[nodiscard]] int node() const { return node_; }

 private:
  int node_;
};

enum class InitialCondition {
  pinned,       // s_0 is set to the current estimate (control)
  arrival_cost  // s_0 is free and penalised against a prior (estimation)
};

struct OcpProblem {
  using Ode = std::function<Vector(const Vector& x, const Vector& u, const Vector& p)>;
  using StageResidual = std::function<Vector(int stage, const Vector& x, const Vector& u, const Vector& p)>;
  using TerminalResidual = std::function<Vector(const Vector& x, const Vector& p)>;

  int horizon{0};
  int nx{0};
  int nu{0};
  int np{0};
  double dt{0.2};

  Ode ode;
  StageResidual stage_residual;
  Matrix stage_weight;
  TerminalResidual terminal_residual;  // optional
  Matrix terminal_weight;

  Vector u_min, u_max;  // empty -> unbounded
  Vector p_min, p_max;
  Vector x_min, x_max;  // enforced by quadratic penalty

  InitialCondition initial{InitialCondition::pinned};
  Vector arrival_reference;  // [s_0; p]
  Matrix arrival_weight;

  double state_penalty{1e4};
  double regularization{1e-8};
  double fd_step{1e-6};

  void validate() const {
    if (horizon < 1 || nx < 1 || nu < 0 || np < 0) throw std::invalid_argument("ocp: bad dimensions");
    if (nx + nu + np > kMaxNodeSize || 2 * nx > kMaxNodeSize)
      throw std::invalid_argument("ocp: node dimensions exceed " + std::to_string(kMaxNodeSize));
    if (!(dt > 0.0)) throw std::invalid_argument("ocp: dt must be positive");
    if (!ode || !stage_residual) throw std::invalid_argument("ocp: dynamics and stage residual are required");
    auto check_weight = [](const Matrix& w, const char* name) {
      if (w.rows() != w.cols()) throw std::invalid_argument(std::string("ocp: ") + name + " not square");
      if (!w.isApprox(w.transpose(), 1e-12)) throw std::invalid_argument(std::string("ocp: ") + name + " not symmetric");
      if (w.size() > 0) {
        Eigen::LLT<Matrix> llt(w);
        if (llt.info() != Eigen::Success)
          throw std::invalid_argument(std::string("ocp: ") + name + " not positive definite");
      }
    };
    check_weight(stage_weight, "stage weight");
    if (terminal_residual) check_weight(terminal_weight, "terminal weight");
    auto check_box = [](const Vector& lo, const Vector& hi, int n, const char* name) {
      if (lo.size() == 0 && hi.size() == 0) return;
      if (lo.size() != n || hi.size() != n) throw std::invalid_argument(std::string("ocp: ") + name + " size");
      if ((lo.array() > hi.array()).any()) throw std::invalid_argument(std::string("ocp: ") + name + " min > max");
    };
    check_box(u_min, u_max, nu, "input bounds");
    check_box(p_min, p_max, np, "parameter bounds");
    check_box(x_min, x_max, nx, "state bounds");
    if (initial == InitialCondition::arrival_cost) {
      if (arrival_reference.size() != nx + np) throw std::invalid_argument("ocp: arrival reference size");
      if (arrival_weight.rows() != nx + np || arrival_weight.cols() != nx + np)
        throw std::invalid_argument("ocp: arrival weight size");
    }
  }

  /// Change of the state over one RK4 step of the ODE.
  [[nodiscard]] Vector increment(const Vector& x, const Vector& u, const Vector& p) const {
    return rk4_increment([&](const Vector& s) { return Vector(ode(s, u, p)); }, x, dt);
  }

  /// Shooting map: one RK4 step of the ODE over dt.
  [[nodiscard]] Vector integrate(const Vector& x, const Vector& u, const Vector& p) const {
    return x + increment(x, u, p);
  }
};

struct OcpSolution {
  std::vector<Vector> x;  // N+1 node states
  std::vector<Vector> u;  // N inputs
  Vector p;
  double objective{0.0};  // at the linearisation point
  double kkt{0.0};        // first-order optimality measure at the linearisation point
  double qp_kkt{0.0};     // natural residual of the condensed QP at its solution
  int qp_iterations{0};
  bool stale{false};
  double prep_seconds{0.0};
  double feedback_seconds{0.0};

  [[nodiscard]] int horizon() const { return static_cast<int>(u.size()); }
};

struct PreparedQp {
  OcpSolution linearization;
  InitialCondition initial{InitialCondition::pinned};
  int nx{0}, nu{0}, np{0}, horizon{0};
  int nz{0};
  int u_offset{0}, p_offset{0};
  Matrix hessian;
  Eigen::VectorXd gradient;  // at e = 0
  Matrix gradient_e;   // d gradient / d e  (pinned mode)
  std::vector<Matrix> state_sens;  // G_k
  std::vector<Matrix> x0_sens;     // T_k (pinned mode)
  std::vector<Vector> offsets;     // h_k
  Eigen::VectorXd lower, upper;
  Vector u_min, u_max, p_min, p_max;
  double gap_norm{0.0};
  double objective{0.0};
  double prep_seconds{0.0};
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what, int node) {
  if (!m.allFinite())
    throw SolverError(std::string("non-finite ") + what + " at node " + std::to_string(node), node);
}

/// Forward-difference Jacobian of f at v with relative step.
template <typename F>
NodeMatrix fd_jacobian(F&& f, const Vector& v, const Vector& f0, double rel_step) {
  NodeMatrix J(f0.size(), v.size());
  Vector vp = v;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(v(j)));
    vp(j) = v(j) + h;
    J.col(j) = (f(vp) - f0) / h;
    vp(j) = v(j);
  }
  return J;
}

inline Vector state_violation(const OcpProblem& pb, const Vector& x) {
  Vector r(2 * pb.nx);
  for (int i = 0; i < pb.nx; ++i) {
    r(i) = std::max(0.0, x(i) - pb.x_max(i));
    r(pb.nx + i) = std::max(0.0, pb.x_min(i) - x(i));
  }
  return r;
}

}  // namespace detail

/// Nonlinear objective at the given node values (shooting gaps are not priced).
inline double evaluate_objective(const OcpProblem& pb, const OcpSolution& sol) {
  double phi = 0.0;
  for (int k = 0; k < pb.horizon; ++k) {
    const Vector r = pb.stage_residual(k, sol.x[k], sol.u[k], sol.p);
    phi += r.dot(pb.stage_weight * r);
  }
  if (pb.terminal_residual) {
    const Vector r = pb.terminal_residual(sol.x[pb.horizon], sol.p);
    phi += r.dot(pb.terminal_weight * r);
  }
  if (pb.initial == InitialCondition::arrival_cost) {
    Vector a(pb.nx + pb.np);
    a << sol.x[0], sol.p;
    a -= pb.arrival_reference;
    phi += a.dot(pb.arrival_weight * a);
  }
  if (pb.x_min.size() > 0) {
    const int first = pb.initial == InitialCondition::pinned ? 1 : 0;
    for (int k = first; k <= pb.horizon; ++k) phi += pb.state_penalty * detail::state_violation(pb, sol.x[k]).squaredNorm();
  }
  return phi;
}

/// Forward simulation from x0 with the given inputs; a reference-initialised
/// warm start for the first call.
inline OcpSolution simulate_guess(const OcpProblem& pb, const Vector& x0, const std::vector<Vector>& u,
                                  const Vector& p) {
  OcpSolution s;
  s.x.reserve(static_cast<std::size_t>(pb.horizon) + 1);
  s.x.push_back(x0);
  s.u = u;
  s.p = p;
  for (int k = 0; k < pb.horizon; ++k) s.x.push_back(pb.integrate(s.x.back(), u[k], p));
  return s;
}

/// Shifts node variables one sample forward, duplicating the last node/input.
inline OcpSolution shift_warm_start(const OcpSolution& sol) {
  OcpSolution out = sol;
  if (sol.x.size() >= 2) {
    for (std::size_t k = 0; k + 1 < sol.x.size(); ++k) out.x[k] = sol.x[k + 1];
    out.x.back() = sol.x.back();
  }
  if (sol.u.size() >= 2) {
    for (std::size_t k = 0; k + 1 < sol.u.size(); ++k) out.u[k] = sol.u[k + 1];
    out.u.back() = sol.u.back();
  }
  out.stale = false;
  return out;
}

/// Real-time-iteration Gauss-Newton solver. One instance per consumer; the
/// counters record linearisations and QP solves for the one-iteration contract.
class RtiSolver {
 public:
  PreparedQp prepare(const OcpProblem& pb, const OcpSolution& warm) {
    const auto t0 = std::chrono::steady_clock::now();
    pb.validate();
    const int N = pb.horizon, nx = pb.nx, nu = pb.nu, np = pb.np;
    if (static_cast<int>(warm.x.size()) != N + 1 || static_cast<int>(warm.u.size()) != N || warm.p.size() != np)
      throw std::invalid_argument("rti: warm start dimensions do not match the problem");
    for (int k = 0; k <= N; ++k)
      if (warm.x[k].size() != nx) throw std::invalid_argument("rti: warm start state size");
    for (int k = 0; k < N; ++k)
      if (warm.u[k].size() != nu) throw std::invalid_argument("rti: warm start input size");

    PreparedQp qp;
    qp.linearization = warm;
    qp.initial = pb.initial;
    qp.nx = nx, qp.nu = nu, qp.np = np, qp.horizon = N;
    const bool pinned = pb.initial == InitialCondition::pinned;
    const int s0n = pinned ? 0 : nx;
    qp.u_offset = s0n;
    qp.p_offset = s0n + N * nu;
    qp.nz = qp.p_offset + np;
    const int nz = qp.nz;
    qp.u_min = pb.u_min, qp.u_max = pb.u_max, qp.p_min = pb.p_min, qp.p_max = pb.p_max;

    qp.state_sens.assign(N + 1, Matrix::Zero(nx, nz));
    qp.offsets.assign(N + 1, Vector::Zero(nx));
    if (pinned) {
      qp.x0_sens.assign(N + 1, Matrix::Zero(nx, nx));
      qp.x0_sens[0].setIdentity();
    } else {
      qp.state_sens[0].leftCols(nx).setIdentity();
    }

    auto active_cols = [&](int node) { return np > 0 ? nz : s0n + node * nu; };

    // Shooting sensitivities and condensing recursion.
    double gap = 0.0;
    const int nv = nx + nu + np;
    Vector v(nv);
    for (int k = 0; k < N; ++k) {
      const Vector& xk = warm.x[k];
      const Vector& uk = warm.u[k];
      v << xk, uk, warm.p;
      // Differencing the increment rather than the next state avoids
      // cancelling against the state magnitude; the identity is added exactly.
      auto step = [&](const Vector& w) { return pb.increment(w.head(nx), w.segment(nx, nu), w.tail(np)); };
      const Vector dk = step(v);
      const Vector fk = xk + dk;
      detail::require_finite(fk, "shooting result", k);
      NodeMatrix J = detail::fd_jacobian(step, v, dk, pb.fd_step);
      J.leftCols(nx).diagonal().array() += 1.0;
      detail::require_finite(J, "shooting Jacobian", k);
      const auto A = J.leftCols(nx);
      const auto B = J.middleCols(nx, nu);
      const auto E = J.rightCols(np);
      const Vector c = fk - warm.x[k + 1];
      gap = std::max(gap, c.lpNorm<Eigen::Infinity>());

      // Without parameters only the columns of earlier inputs (and s_0) are nonzero.
      Matrix& G = qp.state_sens[k + 1];
      const int cols = active_cols(k);
      G.leftCols(cols).noalias() = A.lazyProduct(qp.state_sens[k].leftCols(cols));
      if (np > 0) G.rightCols(nz - cols).noalias() = A.lazyProduct(qp.state_sens[k].rightCols(nz - cols));
      if (nu > 0) G.middleCols(qp.u_offset + k * nu, nu) += B;
      if (np > 0) G.middleCols(qp.p_offset, np) += E;
      if (pinned) qp.x0_sens[k + 1].noalias() = A.lazyProduct(qp.x0_sens[k]);
      qp.offsets[k + 1].noalias() = A * qp.offsets[k];
      qp.offsets[k + 1] += c;
    }
    qp.gap_norm = gap;

    // Least-squares terms: H = 2 sum J'WJ, g = 2 sum J'W r.
    qp.hessian = Matrix::Zero(nz, nz);
    qp.gradient = Eigen::VectorXd::Zero(nz);
    qp.gradient_e = Matrix::Zero(nz, pinned ? nx : 0);
    double objective = 0.0;

    // Residual Jacobians are assembled in reusable workspaces; rows never
    // exceed the largest residual and columns never exceed nz.
    const Eigen::Index max_rows = std::max<Eigen::Index>(
        {pb.stage_weight.rows(), pb.terminal_weight.rows(), nx + np, pb.x_min.size() > 0 ? 2 * nx : 0});
    if (jz_.rows() < max_rows || jz_.cols() < nz) jz_.resize(max_rows, nz);
    if (wj_.rows() < max_rows || wj_.cols() < nz) wj_.resize(max_rows, nz);
    if (je_.rows() < max_rows || je_.cols() < nx) je_.resize(max_rows, nx);

    // Jz holds the leading `cols` columns of the residual Jacobian; the rest are zero.
    using ConstRef = Eigen::Ref<const Matrix>;
    auto accumulate = [&](const Vector& r, const ConstRef& Jz, const ConstRef* Je, const Matrix& W, bool unit_weight) {
      const Eigen::Index rows = Jz.rows(), cols = Jz.cols();
      auto WJ = wj_.topLeftCorner(rows, cols);
      if (unit_weight) WJ = Jz;
      else WJ.noalias() = W.lazyProduct(Jz);
      qp.hessian.topLeftCorner(cols, cols).noalias() += 2.0 * Jz.transpose().lazyProduct(WJ);
      qp.gradient.head(cols).noalias() += 2.0 * WJ.transpose() * r;
      if (Je != nullptr) qp.gradient_e.topRows(cols).noalias() += 2.0 * WJ.transpose().lazyProduct(*Je);
    };

    // Residual r(x, u, p) linearised along ds = G z + T e + h.
    auto add_residual = [&](int node, const Vector& r0, const NodeMatrix& Jx, const NodeMatrix* Ju, int u_col,
                            const NodeMatrix& Jp, const Matrix& W, bool unit_weight) {
      const int cols = Ju != nullptr && np == 0 ? std::min(nz, u_col + nu) : active_cols(node);
      const Eigen::Index rows = Jx.rows();
      auto Jz = jz_.topLeftCorner(rows, cols);
      Jz.noalias() = Jx.lazyProduct(qp.state_sens[node].leftCols(cols));
      if (Ju != nullptr && nu > 0) Jz.middleCols(u_col, nu) += *Ju;
      if (np > 0) Jz.middleCols(qp.p_offset, np) += Jp;
      const Vector r = r0 + Jx * qp.offsets[node];
      const ConstRef jz_ref(Jz);
      if (pinned) {
        auto Je = je_.topLeftCorner(rows, nx);
        Je.noalias() = Jx.lazyProduct(qp.x0_sens[node]);
        const ConstRef je_ref(Je);
        accumulate(r, jz_ref, &je_ref, W, unit_weight);
      } else {
        accumulate(r, jz_ref, nullptr, W, unit_weight);
      }
    };
    const bool stage_unit = pb.stage_weight.isIdentity(0.0);
    const bool terminal_unit = pb.terminal_residual && pb.terminal_weight.isIdentity(0.0);

    for (int k = 0; k < N; ++k) {
      v << warm.x[k], warm.u[k], warm.p;
      auto res = [&](const Vector& w) {
        return pb.stage_residual(k, w.head(nx), w.segment(nx, nu), w.tail(np));
      };
      const Vector r0 = res(v);
      detail::require_finite(r0, "stage residual", k);
      if (pb.stage_weight.rows() != r0.size()) throw std::invalid_argument("rti: stage weight size");
      const NodeMatrix J = detail::fd_jacobian(res, v, r0, pb.fd_step);
      detail::require_finite(J, "stage residual Jacobian", k);
      objective += r0.dot(pb.stage_weight * r0);
      const NodeMatrix Ju = J.middleCols(nx, nu);
      add_residual(k, r0, J.leftCols(nx), &Ju, qp.u_offset + k * nu, J.rightCols(np), pb.stage_weight, stage_unit);
    }
    if (pb.terminal_residual) {
      Vector w(nx + np);
      w << warm.x[N], warm.p;
      auto res = [&](const Vector& q) { return pb.terminal_residual(q.head(nx), q.tail(np)); };
      const Vector r0 = res(w);
      detail::require_finite(r0, "terminal residual", N);
      if (pb.terminal_weight.rows() != r0.size()) throw std::invalid_argument("rti: terminal weight size");
      const NodeMatrix J = detail::fd_jacobian(res, w, r0, pb.fd_step);
      detail::require_finite(J, "terminal residual Jacobian", N);
      objective += r0.dot(pb.terminal_weight * r0);
      add_residual(N, r0, J.leftCols(nx), nullptr, 0, J.rightCols(np), pb.terminal_weight, terminal_unit);
    }
    if (!pinned) {
      Vector a(nx + np);
      a << warm.x[0], warm.p;
      a -= pb.arrival_reference;
      objective += a.dot(pb.arrival_weight * a);
      Matrix Jz = Matrix::Zero(nx + np, nz);
      Jz.topLeftCorner(nx, nx).setIdentity();
      if (np > 0) Jz.bottomRightCorner(np, np).setIdentity();
      accumulate(a, Jz, nullptr, pb.arrival_weight, false);
    }
    if (pb.x_min.size() > 0) {
      const Matrix W = pb.state_penalty * Matrix::Identity(2 * nx, 2 * nx);
      for (int k = pinned ? 1 : 0; k <= N; ++k) {
        const Vector r0 = detail::state_violation(pb, warm.x[k]);
        NodeMatrix Jx = NodeMatrix::Zero(2 * nx, nx);
        for (int i = 0; i < nx; ++i) {
          if (r0(i) > 0.0) Jx(i, i) = 1.0;
          if (r0(nx + i) > 0.0) Jx(nx + i, i) = -1.0;
        }
        objective += pb.state_penalty * r0.squaredNorm();
        add_residual(k, r0, Jx, nullptr, 0, NodeMatrix::Zero(2 * nx, np), W, false);
      }
    }
    qp.hessian.diagonal().array() += pb.regularization;
    qp.objective = objective;

    // Bounds on the step.
    const double inf = std::numeric_limits<double>::infinity();
    qp.lower = Eigen::VectorXd::Constant(nz, -inf);
    qp.upper = Eigen::VectorXd::Constant(nz, inf);
    if (pb.u_min.size() > 0)
      for (int k = 0; k < N; ++k) {
        qp.lower.segment(qp.u_offset + k * nu, nu) = pb.u_min - warm.u[k];
        qp.upper.segment(qp.u_offset + k * nu, nu) = pb.u_max - warm.u[k];
      }
    if (pb.p_min.size() > 0) {
      qp.lower.segment(qp.p_offset, np) = pb.p_min - warm.p;
      qp.upper.segment(qp.p_offset, np) = pb.p_max - warm.p;
    }

    ++linearizations_;
    qp.prep_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return qp;
  }

  /// Injects the current estimate (pinned mode; ignored otherwise), solves the
  /// condensed QP once and expands. Exactly one Gauss-Newton step.
  OcpSolution feedback(const PreparedQp& qp, const Vector& x0_estimate = Vector()) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool pinned = qp.initial == InitialCondition::pinned;
    Vector e = Vector::Zero(pinned ? qp.nx : 0);
    if (pinned) {
      if (x0_estimate.size() != qp.nx) throw std::invalid_argument("rti: estimate size does not match the problem");
      e = x0_estimate - qp.linearization.x[0];
    }
    Eigen::VectorXd g = qp.gradient;
    if (pinned) g.noalias() += qp.gradient_e * e;

    ++qp_solves_;
    const BoxQpResult res = solve_box_qp(qp.hessian, g, qp.lower, qp.upper);

    OcpSolution out = qp.linearization;
    out.prep_seconds = qp.prep_seconds;
    out.objective = qp.objective;
    double stationarity = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i)
      stationarity = std::max(stationarity, std::abs(std::clamp(-g(i), qp.lower(i), qp.upper(i))));
    out.kkt = std::max({stationarity, qp.gap_norm, e.size() > 0 ? e.lpNorm<Eigen::Infinity>() : 0.0});

    if (!res.converged || !res.z.allFinite()) {
      out.stale = true;
      out.feedback_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return out;
    }
    const Eigen::VectorXd& z = res.z;
    for (int k = 0; k <= qp.horizon; ++k) {
      Vector ds = qp.state_sens[k] * z + qp.offsets[k];
      if (pinned) ds.noalias() += qp.x0_sens[k] * e;
      out.x[k] += ds;
    }
    if (pinned) out.x[0] = x0_estimate;
    for (int k = 0; k < qp.horizon; ++k) {
      out.u[k] += z.segment(qp.u_offset + k * qp.nu, qp.nu);
      if (qp.u_min.size() > 0) out.u[k] = out.u[k].cwiseMax(qp.u_min).cwiseMin(qp.u_max);
    }
    if (qp.np > 0) {
      out.p += z.segment(qp.p_offset, qp.np);
      if (qp.p_min.size() > 0) out.p = out.p.cwiseMax(qp.p_min).cwiseMin(qp.p_max);
    }
    out.qp_kkt = box_qp_kkt_residual(qp.hessian, g, qp.lower, qp.upper, z);
    out.qp_iterations = res.iterations;
    out.stale = false;
    out.feedback_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  [[nodiscard]] long linearizations() const { return linearizations_; }
  [[nodiscard]] long qp_solves() const { return qp_solves_; }

 private:
  long linearizations_{0};
  long qp_solves_{0};
  Matrix jz_, wj_, je_;
};

}  // namespace ttmpc
