#pragma once

// Closed-loop orchestration (sense, estimate, reference, control, tube, plant)
// and the RunLog with its CSV serialization.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttmpc/denmpc.hpp"
#include "ttmpc/nmhe.hpp"
#include "ttmpc/plant.hpp"
#include "ttmpc/scenario.hpp"
#include "ttmpc/trajectory.hpp"

namespace ttmpc {

struct RunRecord {
  double t{0.0};
  VehicleState truth;
  ControlInput wheels;  // actuator angles at the sample
  SlipParams slip_true;
  MeasurementSample meas;
  VehicleState est;
  SlipParams slip_est;
  Pose nominal_t{Pose::Zero()};
  Pose nominal_i{Pose::Zero()};
  ControlInput nominal;
  ControlInput applied;
  double tube_corr_t{0.0}, tube_corr_i{0.0};
  double nmhe_ms{0.0};
  double prep_t_ms{0.0}, fb_t_ms{0.0};  // centralized solve when mode is cenmpc
  double prep_i_ms{0.0}, fb_i_ms{0.0};
  double err_t{0.0}, err_i{0.0};  // online Euclidean error [m]
  SegmentClass seg_t{SegmentClass::straight}, seg_i{SegmentClass::straight};
  int est_stale{0}, stale_t{0}, stale_i{0};
};

struct RunLog {
  std::string mode;
  std::vector<RunRecord> records;
  bool completed{true};
  std::string failure;
  int constraint_violations{0};
};

namespace detail {

struct Column {
  const char* name;
  double (*get)(const RunRecord&);
  void (*set)(RunRecord&, double);
};

#define TTMPC_COL(label, expr) \
  Column { label, [](const RunRecord& r) { return static_cast<double>(r.expr); }, [](RunRecord& r, double v) { r.expr = static_cast<decltype(r.expr)>(v); } }

inline const std::vector<Column>& runlog_columns() {
  static const std::vector<Column> cols{
      TTMPC_COL("t", t),
      TTMPC_COL("x_t", truth.x_t), TTMPC_COL("y_t", truth.y_t), TTMPC_COL("theta", truth.theta),
      TTMPC_COL("x_i", truth.x_i), TTMPC_COL("y_i", truth.y_i), TTMPC_COL("psi", truth.psi),
      TTMPC_COL("beta", truth.beta), TTMPC_COL("v", truth.v),
      TTMPC_COL("wheel_delta_t", wheels.delta_t), TTMPC_COL("wheel_delta_i", wheels.delta_i),
      TTMPC_COL("mu", slip_true.mu), TTMPC_COL("kappa", slip_true.kappa), TTMPC_COL("eta", slip_true.eta),
      TTMPC_COL("meas_x_t", meas.x_t), TTMPC_COL("meas_y_t", meas.y_t), TTMPC_COL("meas_x_i", meas.x_i),
      TTMPC_COL("meas_y_i", meas.y_i), TTMPC_COL("meas_beta", meas.beta), TTMPC_COL("meas_v", meas.v),
      TTMPC_COL("meas_delta_t", meas.delta_t), TTMPC_COL("meas_delta_i", meas.delta_i),
      TTMPC_COL("est_x_t", est.x_t), TTMPC_COL("est_y_t", est.y_t), TTMPC_COL("est_theta", est.theta),
      TTMPC_COL("est_x_i", est.x_i), TTMPC_COL("est_y_i", est.y_i), TTMPC_COL("est_psi", est.psi),
      TTMPC_COL("est_beta", est.beta), TTMPC_COL("est_v", est.v),
      TTMPC_COL("est_mu", slip_est.mu), TTMPC_COL("est_kappa", slip_est.kappa), TTMPC_COL("est_eta", slip_est.eta),
      TTMPC_COL("nom_x_t", nominal_t(0)), TTMPC_COL("nom_y_t", nominal_t(1)), TTMPC_COL("nom_theta", nominal_t(2)),
      TTMPC_COL("nom_x_i", nominal_i(0)), TTMPC_COL("nom_y_i", nominal_i(1)), TTMPC_COL("nom_psi", nominal_i(2)),
      TTMPC_COL("delta_t_nom", nominal.delta_t), TTMPC_COL("delta_i_nom", nominal.delta_i),
      TTMPC_COL("delta_t_applied", applied.delta_t), TTMPC_COL("delta_i_applied", applied.delta_i),
      TTMPC_COL("tube_corr_t", tube_corr_t), TTMPC_COL("tube_corr_i", tube_corr_i),
      TTMPC_COL("nmhe_ms", nmhe_ms),
      TTMPC_COL("prep_t_ms", prep_t_ms), TTMPC_COL("fb_t_ms", fb_t_ms),
      TTMPC_COL("prep_i_ms", prep_i_ms), TTMPC_COL("fb_i_ms", fb_i_ms),
      TTMPC_COL("err_t", err_t), TTMPC_COL("err_i", err_i),
      TTMPC_COL("est_stale", est_stale), TTMPC_COL("stale_t", stale_t), TTMPC_COL("stale_i", stale_i),
  };
  return cols;
}

#undef TTMPC_COL

/// Shortest representation that parses back to the same double.
inline void put_double(std::ostream& os, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, res.ptr - buf);
}

inline SegmentClass parse_segment_class(const std::string& s) {
  for (std::size_t i = 0; i < kSegmentClassCount; ++i) {
    const auto c = static_cast<SegmentClass>(i);
    if (s == to_string(c)) return c;
  }
  throw std::runtime_error("unknown segment class '" + s + "'");
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline void write_runlog_csv(const RunLog& log, std::ostream& os) {
  const auto& cols = detail::runlog_columns();
  for (const auto& c : cols) os << c.name << ',';
  os << "seg_t,seg_i\n";
  for (const RunRecord& r : log.records) {
    for (const auto& c : cols) {
      detail::put_double(os, c.get(r));
      os << ',';
    }
    os << to_string(r.seg_t) << ',' << to_string(r.seg_i) << '\n';
  }
}

inline RunLog read_runlog_csv(std::istream& is) {
  const auto& cols = detail::runlog_columns();
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("runlog: empty file");
  const auto header = detail::split_csv(line);
  if (header.size() != cols.size() + 2) throw std::runtime_error("runlog: unexpected header");
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (header[i] != cols[i].name) throw std::runtime_error("runlog: unexpected column '" + header[i] + "'");
  RunLog log;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw std::runtime_error("runlog: line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                               " fields");
    RunRecord r;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      double v = 0.0;
      const auto& s = cells[i];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error("runlog: line " + std::to_string(lineno) + ", column '" + cols[i].name +
                                 "': bad number");
      cols[i].set(r, v);
    }
    r.seg_t = detail::parse_segment_class(cells[cols.size()]);
    r.seg_i = detail::parse_segment_class(cells[cols.size() + 1]);
    log.records.push_back(r);
  }
  return log;
}

/// Controller trace; prep/fb sum both decentralized instances.
inline void write_controller_trace(const RunLog& log, std::ostream& os) {
  os << "t,delta_t_nom,delta_t_applied,delta_i_nom,delta_i_applied,tube_corr_t,tube_corr_i,prep_ms,fb_ms\n";
  for (const RunRecord& r : log.records) {
    const double vals[] = {r.t, r.nominal.delta_t, r.applied.delta_t, r.nominal.delta_i, r.applied.delta_i,
                           r.tube_corr_t, r.tube_corr_i, r.prep_t_ms + r.prep_i_ms, r.fb_t_ms + r.fb_i_ms};
    for (std::size_t i = 0; i < std::size(vals); ++i) {
      if (i > 0) os << ',';
      detail::put_double(os, vals[i]);
    }
    os << '\n';
  }
}

inline void write_estimator_trace(const RunLog& log, std::ostream& os) {
  os << "t,x_t,y_t,theta,x_i,y_i,psi,beta,v,mu,kappa,eta,mu_true,kappa_true,eta_true,solve_ms,stale\n";
  for (const RunRecord& r : log.records) {
    const double vals[] = {r.t, r.est.x_t, r.est.y_t, r.est.theta, r.est.x_i, r.est.y_i, r.est.psi,
                           r.est.beta, r.est.v, r.slip_est.mu, r.slip_est.kappa, r.slip_est.eta,
                           r.slip_true.mu, r.slip_true.kappa, r.slip_true.eta, r.nmhe_ms,
                           static_cast<double>(r.est_stale)};
    for (std::size_t i = 0; i < std::size(vals); ++i) {
      if (i > 0) os << ',';
      detail::put_double(os, vals[i]);
    }
    os << '\n';
  }
}

/// Initial truth: trailer at the path start, tractor one hitch length ahead,
/// both on the path and tangent to it, the tractor shifted laterally if asked.
inline PlantState initial_plant_state(const PathSpec& path, const ScenarioConfig& cfg) {
  const double ahead = cfg.geometry.hitch_offset + cfg.geometry.trailer_length;
  const Pose pt = path.pose_at(ahead);
  const Pose pi = path.pose_at(0.0);
  PlantState s;
  s.vehicle.x_t = pt(0) - std::sin(pt(2)) * cfg.initial_lateral_offset;
  s.vehicle.y_t = pt(1) + std::cos(pt(2)) * cfg.initial_lateral_offset;
  s.vehicle.theta = pt(2);
  s.vehicle.x_i = pi(0);
  s.vehicle.y_i = pi(1);
  s.vehicle.psi = pi(2);
  s.vehicle.beta = 0.0;
  s.vehicle.v = cfg.plant.speed_command;
  return s;
}

/// Runs the loop until the duration elapses or the tractor reaches the end of
/// the path. Failures truncate the log and are reported in `failure`.
inline RunLog run_closed_loop(ScenarioConfig cfg) {
  cfg.finalize();
  const PathSpec path = cfg.path.build();
  RunLog log;
  log.mode = cfg.mode_name();

  std::mt19937_64 rng(cfg.seed);
  PlantState plant = initial_plant_state(path, cfg);
  MovingHorizonEstimator nmhe(cfg.nmhe, cfg.geometry);
  ReferenceGenerator refgen(path, cfg.lookahead);
  // Both vehicles start at known arc lengths; seeding the cursors keeps the
  // first lookup local even where the path passes close to itself.
  const std::size_t tractor_start = path.index_at(cfg.geometry.hitch_offset + cfg.geometry.trailer_length);
  refgen.tractor_cursor().reset(tractor_start);
  refgen.trailer_cursor().reset(0);
  PathCursor err_t(path, cfg.lookahead.search_window), err_i(path, cfg.lookahead.search_window);
  err_t.reset(tractor_start);
  err_i.reset(0);
  std::optional<DecentralizedController> decentral;
  std::optional<CentralizedNmpc> central;
  if (cfg.mode == ControllerMode::decentralized) decentral.emplace(cfg.nmpc, cfg.geometry, cfg.gain, cfg.tube);
  else central.emplace(cfg.nmpc, cfg.geometry);

  // Stop once the look-ahead window would run off the end of the path.
  const double end_s = path.length() - cfg.lookahead.lookahead;
  const double auto_limit = 3.0 * path.length() / std::max(0.1, std::abs(cfg.plant.speed_command));
  const double t_end = cfg.duration > 0.0 ? cfg.duration : auto_limit;
  const auto steps = static_cast<long>(std::floor(t_end / cfg.dt + 1e-9));
  const double ms = cfg.record_timing ? 1e3 : 0.0;

  try {
    for (long k = 0; k <= steps; ++k) {
      RunRecord r;
      r.t = static_cast<double>(k) * cfg.dt;
      r.truth = plant.vehicle;
      r.wheels = plant.actuator;
      r.slip_true = cfg.slip.at(r.t);
      r.meas = sense(r.t, plant, cfg.noise, rng);

      const ClosestPoint ct = err_t.locate({plant.vehicle.x_t, plant.vehicle.y_t});
      const ClosestPoint ci = err_i.locate({plant.vehicle.x_i, plant.vehicle.y_i});
      r.err_t = ct.distance, r.err_i = ci.distance;
      r.seg_t = classify(path[ct.index].kind, path[ct.index].curvature);
      r.seg_i = classify(path[ci.index].kind, path[ci.index].curvature);
      if (cfg.duration <= 0.0 && ct.s >= end_s) break;

      if (cfg.estimator == EstimatorKind::truth) {
        r.est = plant.vehicle;
        r.slip_est = r.slip_true;
      } else {
        const auto t0 = std::chrono::steady_clock::now();
        EstimatorOutput eo = k == 0 ? nmhe.initialize(r.meas, plant.vehicle.theta, plant.vehicle.psi)
                                    : nmhe.update(r.meas);
        r.nmhe_ms = ms * std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.est = eo.state;
        r.slip_est = eo.slip;
        r.est_stale = eo.stale ? 1 : 0;
        const double dev = std::max(std::hypot(r.est.x_t - r.truth.x_t, r.est.y_t - r.truth.y_t),
                                    std::hypot(r.est.x_i - r.truth.x_i, r.est.y_i - r.truth.y_i));
        if (!(dev <= cfg.divergence_limit)) {
          log.records.push_back(r);
          log.completed = false;
          log.failure = "estimator diverged at t=" + std::to_string(r.t);
          return log;
        }
      }

      ReferenceWindow refs = refgen.generate(r.est);
      refs.delta_t_ref = r.meas.delta_t;
      refs.delta_i_ref = r.meas.delta_i;

      if (decentral) {
        const ControllerCommand cmd = decentral->step(r.t, r.est, r.slip_est, refs);
        r.nominal = cmd.nominal;
        r.applied = cmd.applied;
        r.tube_corr_t = cmd.tube_corr_t, r.tube_corr_i = cmd.tube_corr_i;
        r.nominal_t = cmd.nominal_t, r.nominal_i = cmd.nominal_i;
        r.prep_t_ms = ms * cmd.prep_t, r.fb_t_ms = ms * cmd.fb_t;
        r.prep_i_ms = ms * cmd.prep_i, r.fb_i_ms = ms * cmd.fb_i;
        r.stale_t = cmd.stale_t, r.stale_i = cmd.stale_i;
      } else {
        const NmpcResult res = central->solve(r.est.poses(), refs, r.slip_est, r.est.beta, r.est.v);
        r.nominal = {res.input(0), res.input(1)};
        r.applied = cfg.nmpc.limits.clamp(r.nominal);
        r.nominal_t = r.est.tractor(), r.nominal_i = r.est.trailer();
        r.prep_t_ms = ms * res.prep_seconds, r.fb_t_ms = ms * res.feedback_seconds;
        r.stale_t = r.stale_i = res.stale;
      }

      log.records.push_back(r);
      if (!cfg.nmpc.limits.admits(r.applied, 0.0)) {
        ++log.constraint_violations;
        log.completed = false;
        log.failure = "steering constraint violated at t=" + std::to_string(r.t);
        return log;
      }
      plant = step_plant(plant, r.applied, r.slip_true, cfg.dt, cfg.geometry, cfg.plant);
    }
  } catch (const std::exception& e) {
    log.completed = false;
    log.failure = e.what();
  }
  return log;
}

}  // namespace ttmpc
