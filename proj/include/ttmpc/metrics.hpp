#pragma once

// Offline Euclidean tracking error against the path, per-class statistics in
// centimetres, tube-correction share and solver timing tables.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttmpc/simulation.hpp"
#include "ttmpc/trajectory.hpp"

namespace ttmpc {

struct ErrorSample {
  double t{0.0};
  double tractor{0.0};  // [m]
  double trailer{0.0};
  SegmentClass seg_t{SegmentClass::straight};
  SegmentClass seg_i{SegmentClass::straight};
};

/// Exact (brute-force) closest-point error for every record.
inline std::vector<ErrorSample> euclidean_error_series(const RunLog& log, const PathSpec& path) {
  if (log.records.empty()) throw std::invalid_argument("error series: empty run log");
  std::vector<ErrorSample> out;
  out.reserve(log.records.size());
  for (const RunRecord& r : log.records) {
    const ClosestPoint ct = closest_point(path, {r.truth.x_t, r.truth.y_t});
    const ClosestPoint ci = closest_point(path, {r.truth.x_i, r.truth.y_i});
    out.push_back({r.t, ct.distance, ci.distance, classify(path[ct.index].kind, path[ct.index].curvature),
                   classify(path[ci.index].kind, path[ci.index].curvature)});
  }
  return out;
}

struct ErrorStats {
  std::size_t count{0};
  double mean_cm{0.0}, median_cm{0.0}, max_cm{0.0};
};

struct TimingStats {
  std::size_t count{0};
  double min_ms{0.0}, avg_ms{0.0}, max_ms{0.0};
};

struct ControllerTiming {
  std::string name;
  TimingStats preparation, feedback, overall;
};

struct ErrorReport {
  std::string mode;
  double steady_state_start{10.0};
  std::array<ErrorStats, kSegmentClassCount> tractor{};
  std::array<ErrorStats, kSegmentClassCount> trailer{};
  ErrorStats tractor_all, trailer_all;
  double tube_share_t{0.0}, tube_share_i{0.0};  // [%]
  std::vector<ControllerTiming> timing;
  TimingStats estimator;
};

struct SummaryConfig {
  double steady_state_start{10.0};  // [s] initial transient excluded from statistics
};

inline ErrorStats error_stats(std::vector<double> values_m) {
  ErrorStats s;
  s.count = values_m.size();
  if (values_m.empty()) return s;
  double sum = 0.0;
  for (double v : values_m) sum += v;
  s.mean_cm = 100.0 * sum / static_cast<double>(values_m.size());
  std::sort(values_m.begin(), values_m.end());
  const std::size_t n = values_m.size();
  s.median_cm = 100.0 * (n % 2 == 1 ? values_m[n / 2] : 0.5 * (values_m[n / 2 - 1] + values_m[n / 2]));
  s.max_cm = 100.0 * values_m.back();
  return s;
}

inline TimingStats timing_stats(const std::vector<double>& ms) {
  TimingStats s;
  s.count = ms.size();
  if (ms.empty()) return s;
  s.min_ms = *std::min_element(ms.begin(), ms.end());
  s.max_ms = *std::max_element(ms.begin(), ms.end());
  double sum = 0.0;
  for (double v : ms) sum += v;
  s.avg_ms = sum / static_cast<double>(ms.size());
  return s;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ErrorReport summarize(const std::vector<ErrorSample>& series, const RunLog& log, const SummaryConfig& cfg = {}) {
  if (series.size() != log.records.size()) throw std::invalid_argument("summarize: series and log differ in length");
  ErrorReport rep;
  rep.mode = log.mode;
  rep.steady_state_start = cfg.steady_state_start;

  std::array<std::vector<double>, kSegmentClassCount> by_t, by_i;
  std::vector<double> all_t, all_i;
  double corr_t = 0.0, corr_i = 0.0, app_t = 0.0, app_i = 0.0;
  std::vector<double> pt, ft, ot, pi, fi, oi, est;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const ErrorSample& e = series[k];
    const RunRecord& r = log.records[k];
    if (e.t < cfg.steady_state_start) continue;
    by_t[static_cast<std::size_t>(e.seg_t)].push_back(e.tractor);
    by_i[static_cast<std::size_t>(e.seg_i)].push_back(e.trailer);
    all_t.push_back(e.tractor);
    all_i.push_back(e.trailer);
    corr_t += std::abs(r.tube_corr_t), corr_i += std::abs(r.tube_corr_i);
    app_t += std::abs(r.applied.delta_t), app_i += std::abs(r.applied.delta_i);
    pt.push_back(r.prep_t_ms), ft.push_back(r.fb_t_ms), ot.push_back(r.prep_t_ms + r.fb_t_ms);
    pi.push_back(r.prep_i_ms), fi.push_back(r.fb_i_ms), oi.push_back(r.prep_i_ms + r.fb_i_ms);
    est.push_back(r.nmhe_ms);
  }
  if (all_t.empty()) throw std::invalid_argument("summarize: steady-state window is empty");
  for (std::size_t c = 0; c < kSegmentClassCount; ++c) {
    rep.tractor[c] = error_stats(by_t[c]);
    rep.trailer[c] = error_stats(by_i[c]);
  }
  rep.tractor_all = error_stats(all_t);
  rep.trailer_all = error_stats(all_i);
  rep.tube_share_t = app_t > 0.0 ? 100.0 * corr_t / app_t : 0.0;
  rep.tube_share_i = app_i > 0.0 ? 100.0 * corr_i / app_i : 0.0;
  if (log.mode == "cenmpc") {
    rep.timing.push_back({"CeNMPC", timing_stats(pt), timing_stats(ft), timing_stats(ot)});
  } else {
    rep.timing.push_back({"DeNMPC tractor", timing_stats(pt), timing_stats(ft), timing_stats(ot)});
    rep.timing.push_back({"DeNMPC trailer", timing_stats(pi), timing_stats(fi), timing_stats(oi)});
  }
  rep.estimator = timing_stats(est);
  return rep;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

/// Fixed-format text; identical reports give identical bytes.
inline std::string format_report(const ErrorReport& rep) {
  std::string out;
  out += "mode: " + rep.mode + "\n";
  out += "steady state from t = " + detail::fmt("%.1f", rep.steady_state_start) + " s\n\n";
  out += "Euclidean error [cm]\n";
  out += "vehicle  segment      samples      mean    median       max\n";
  auto row = [&](const char* veh, const char* seg, const ErrorStats& s) {
    char buf[160];
    if (s.count == 0)
      std::snprintf(buf, sizeof buf, "%-8s %-12s %7zu %9s %9s %9s\n", veh, seg, s.count, "-", "-", "-");
    else
      std::snprintf(buf, sizeof buf, "%-8s %-12s %7zu %9.2f %9.2f %9.2f\n", veh, seg, s.count, s.mean_cm, s.median_cm,
                    s.max_cm);
    out += buf;
  };
  for (std::size_t c = 0; c < kSegmentClassCount; ++c)
    row("tractor", to_string(static_cast<SegmentClass>(c)), rep.tractor[c]);
  row("tractor", "all", rep.tractor_all);
  for (std::size_t c = 0; c < kSegmentClassCount; ++c)
    row("trailer", to_string(static_cast<SegmentClass>(c)), rep.trailer[c]);
  row("trailer", "all", rep.trailer_all);

  out += "\ntube correction share [%]: tractor " + detail::fmt("%.2f", rep.tube_share_t) + ", trailer " +
         detail::fmt("%.2f", rep.tube_share_i) + "\n\n";

  out += "execution time [ms]     phase          min       avg       max\n";
  auto trow = [&](const std::string& name, const char* phase, const TimingStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s  %-11s %9.4f %9.4f %9.4f\n", name.c_str(), phase, s.min_ms, s.avg_ms,
                  s.max_ms);
    out += buf;
  };
  for (const ControllerTiming& c : rep.timing) {
    trow(c.name, "preparation", c.preparation);
    trow(c.name, "feedback", c.feedback);
    trow(c.name, "overall", c.overall);
  }
  trow("NMHE", "overall", rep.estimator);
  return out;
}

}  // namespace ttmpc
