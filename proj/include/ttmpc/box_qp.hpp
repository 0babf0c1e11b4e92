#pragma once

// Primal active-set solver for strictly convex box-constrained QPs:
//   min 0.5 z'Hz + g'z   s.t.  lb <= z <= ub

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace ttmpc {

enum class BoundState : signed char { lower = -1, free = 0, upper = 1 };

struct BoxQpResult {
  Eigen::VectorXd z;
  std::vector<BoundState> active;
  int iterations{0};
  bool converged{false};
};

/// Natural residual ||z - clamp(z - (Hz + g))||_inf. Zero exactly at the KKT
/// point of the box QP (stationarity plus complementarity).
inline double box_qp_kkt_residual(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::VectorXd& lb,
                                  const Eigen::VectorXd& ub, const Eigen::VectorXd& z) {
  const Eigen::VectorXd grad = H * z + g;
  double r = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double proj = std::clamp(z(i) - grad(i), lb(i), ub(i));
    r = std::max(r, std::abs(z(i) - proj));
  }
  return r;
}

inline BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::VectorXd& lb,
                                const Eigen::VectorXd& ub, const Eigen::VectorXd* warm = nullptr,
                                int max_iterations = -1) {
  const Eigen::Index n = g.size();
  BoxQpResult res;
  res.active.assign(static_cast<std::size_t>(n), BoundState::free);
  res.z = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lb(i) <= ub(i))) return res;  // empty box
  }
  if (warm != nullptr && warm->size() == n) res.z = *warm;
  for (Eigen::Index i = 0; i < n; ++i) {
    res.z(i) = std::clamp(res.z(i), lb(i), ub(i));
    if (res.z(i) == lb(i)) res.active[i] = BoundState::lower;
    else if (res.z(i) == ub(i)) res.active[i] = BoundState::upper;
  }
  if (max_iterations < 0) max_iterations = static_cast<int>(10 * n + 50);

  const double scale = 1.0 + H.cwiseAbs().maxCoeff();
  const double dual_tol = 1e-14 * scale;
  std::vector<Eigen::Index> freeIdx;
  freeIdx.reserve(static_cast<std::size_t>(n));

  bool subspaceOptimal = false;
  for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
    freeIdx.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (res.active[i] == BoundState::free) freeIdx.push_back(i);
    if (freeIdx.empty()) subspaceOptimal = true;

    if (subspaceOptimal) {
      // Release the bound with the most negative multiplier.
      const Eigen::VectorXd grad = H * res.z + g;
      Eigen::Index release = -1;
      double worst = dual_tol;
      for (Eigen::Index i = 0; i < n; ++i) {
        double violation = 0.0;
        if (res.active[i] == BoundState::lower) violation = -grad(i);
        else if (res.active[i] == BoundState::upper) violation = grad(i);
        if (violation > worst && lb(i) < ub(i)) {
          worst = violation;
          release = i;
        }
      }
      if (release < 0) {
        res.converged = res.z.allFinite();
        return res;
      }
      res.active[release] = BoundState::free;
      subspaceOptimal = false;
      continue;
    }

    // Newton step on the free subspace with the active bounds held.
    const Eigen::VectorXd grad = H * res.z + g;
    const auto nf = static_cast<Eigen::Index>(freeIdx.size());
    Eigen::MatrixXd Hff(nf, nf);
    Eigen::VectorXd rhs(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      rhs(a) = -grad(freeIdx[a]);
      for (Eigen::Index b = 0; b < nf; ++b) Hff(a, b) = H(freeIdx[a], freeIdx[b]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Hff);
    if (llt.info() != Eigen::Success) return res;
    const Eigen::VectorXd step = llt.solve(rhs);
    if (!step.allFinite()) return res;

    double alpha = 1.0;
    Eigen::Index blocking = -1;
    BoundState blockingSide = BoundState::free;
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index i = freeIdx[a];
      const double d = step(a);
      if (d < 0.0) {
        const double t = (lb(i) - res.z(i)) / d;
        if (t < alpha) alpha = t, blocking = i, blockingSide = BoundState::lower;
      } else if (d > 0.0) {
        const double t = (ub(i) - res.z(i)) / d;
        if (t < alpha) alpha = t, blocking = i, blockingSide = BoundState::upper;
      }
    }
    alpha = std::max(alpha, 0.0);
    for (Eigen::Index a = 0; a < nf; ++a) res.z(freeIdx[a]) += alpha * step(a);
    if (blocking >= 0) {
      res.z(blocking) = blockingSide == BoundState::lower ? lb(blocking) : ub(blocking);
      res.active[blocking] = blockingSide;
    } else {
      subspaceOptimal = true;
    }
  }
  return res;
}

}  // namespace ttmpc
