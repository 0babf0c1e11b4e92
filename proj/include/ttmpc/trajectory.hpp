#pragma once

// Space-based reference paths (dense polylines) and look-ahead reference
// generation for the tractor and the trailer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttmpc/vehicle_model.hpp"

namespace ttmpc {

enum class SegmentKind { straight, curve };

inline const char* to_string(SegmentKind k) { return k == SegmentKind::straight ? "straight" : "curve"; }

/// Error-accounting classes: straight lines and the three nominal curvatures.
enum class SegmentClass { straight = 0, curve_010 = 1, curve_0125 = 2, curve_015 = 3 };
inline constexpr std::size_t kSegmentClassCount = 4;

inline const char* to_string(SegmentClass c) {
  switch (c) {
    case SegmentClass::straight: return "straight";
    case SegmentClass::curve_010: return "curve_0.100";
    case SegmentClass::curve_0125: return "curve_0.125";
    case SegmentClass::curve_015: return "curve_0.150";
  }
  return "?";
}

/// Maps a curve to the nearest nominal curvature class.
inline SegmentClass classify(SegmentKind kind, double curvature) {
  if (kind == SegmentKind::straight) return SegmentClass::straight;
  constexpr double nominal[] = {0.1, 0.125, 0.15};
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (std::abs(curvature - nominal[i]) < std::abs(curvature - nominal[best])) best = i;
  return static_cast<SegmentClass>(best + 1);
}

struct PathPoint {
  double s{0.0};  // arc length [m]
  double x{0.0}, y{0.0};
  double heading{0.0};  // tangent direction [rad], unwrapped along the path
  int segment_id{0};
  SegmentKind kind{SegmentKind::straight};
  double curvature{0.0};  // 0 on straights, 1/radius on curves

  [[nodiscard]] Eigen::Vector2d position() const { return {x, y}; }
  [[nodiscard]] SegmentClass segment_class() const { return classify(kind, curvature); }
};

/// Immutable dense polyline.
class PathSpec {
 public:
  PathSpec() = default;
  explicit PathSpec(std::vector<PathPoint> points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("path must contain at least one point");
  }

  [[nodiscard]] const std::vector<PathPoint>& points() const { return points_; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] bool empty() const { return points_.empty(); }
  [[nodiscard]] const PathPoint& operator[](std::size_t i) const { return points_[i]; }
  [[nodiscard]] double length() const { return points_.empty() ? 0.0 : points_.back().s; }

  /// Index of the last point with arc length <= s (clamped to the path).
  [[nodiscard]] std::size_t index_at(double s) const {
    auto it = std::upper_bound(points_.begin(), points_.end(), s,
                               [](double value, const PathPoint& p) { return value < p.s; });
    if (it == points_.begin()) return 0;
    return static_cast<std::size_t>(std::distance(points_.begin(), it) - 1);
  }

  /// Linearly interpolated (x, y, heading) at arc length s, clamped to the ends.
  [[nodiscard]] Pose pose_at(double s) const {
    if (s <= points_.front().s) return {points_.front().x, points_.front().y, points_.front().heading};
    if (s >= points_.back().s) return {points_.back().x, points_.back().y, points_.back().heading};
    const std::size_t i = index_at(s);
    const PathPoint& a = points_[i];
    const PathPoint& b = points_[std::min(i + 1, points_.size() - 1)];
    const double span = b.s - a.s;
    const double w = span > 0.0 ? (s - a.s) / span : 0.0;
    return {a.x + w * (b.x - a.x), a.y + w * (b.y - a.y), a.heading + w * (b.heading - a.heading)};
  }

 private:
  std::vector<PathPoint> points_;
};

struct EightShapeParams {
  std::vector<double> radii{10.0, 8.0, 6.67};
  double straight_length{20.0};
  double spacing{0.1};
  // Straight run along the x axis between the entry points of successive
  // figures; half of it is used as lead-in and lead-out.
  double connector_length{40.0};
};

/// Arc swept by each lobe of an eight whose two straights of length L cross at
/// their midpoints and are tangent to lobes of radius r.
inline double eight_lobe_angle(double radius, double straight_length) {
  return std::numbers::pi + 2.0 * std::atan2(radius, 0.5 * straight_length);
}

/// Arc length of one eight: two straights plus two lobes.
inline double eight_shape_length(double radius, double straight_length) {
  return 2.0 * straight_length + 2.0 * radius * eight_lobe_angle(radius, straight_length);
}

/// Total length of the concatenated figures including connectors and lead-in/out.
inline double eight_path_length(const EightShapeParams& p) {
  double len = p.connector_length * static_cast<double>(p.radii.size());
  for (double r : p.radii) len += eight_shape_length(r, p.straight_length);
  return len;
}

namespace detail {

struct PathBuilder {
  double spacing;
  std::vector<PathPoint> pts;
  double x{0.0}, y{0.0}, heading{0.0}, s{0.0};
  int segment{0};

  explicit PathBuilder(double sp, double x0, double y0, double h0) : spacing(sp), x(x0), y(y0), heading(h0) {
    pts.push_back({0.0, x, y, heading, 0, SegmentKind::straight, 0.0});
  }

  // signed_curvature == 0 -> straight
  void add(double length, double signed_curvature) {
    const auto n = static_cast<std::size_t>(std::ceil(length / spacing - 1e-9));
    const double x0 = x, y0 = y, h0 = heading, s0 = s;
    const SegmentKind kind = signed_curvature == 0.0 ? SegmentKind::straight : SegmentKind::curve;
    for (std::size_t j = 1; j <= n; ++j) {
      const double d = length * static_cast<double>(j) / static_cast<double>(n);
      double px, py, ph;
      if (kind == SegmentKind::straight) {
        px = x0 + d * std::cos(h0);
        py = y0 + d * std::sin(h0);
        ph = h0;
      } else {
        const double k = signed_curvature;
        ph = h0 + k * d;
        px = x0 + (std::sin(ph) - std::sin(h0)) / k;
        py = y0 - (std::cos(ph) - std::cos(h0)) / k;
      }
      pts.push_back({s0 + d, px, py, ph, segment, kind, std::abs(signed_curvature)});
    }
    x = pts.back().x;
    y = pts.back().y;
    heading = pts.back().heading;
    s = s0 + length;
    ++segment;
  }
};

}  // namespace detail

/// Concatenated eight-shaped figures, one per radius, standing upright on the
/// x axis. Each figure is entered and left at the bottom of its lower lobe
/// heading +x, so the connecting straights touch the figures only at those
/// tangent points and no two stretches of the path coincide. Lower lobes turn
/// left, upper lobes turn right, and the two straights cross between them.
inline PathSpec build_eight_shape(const EightShapeParams& params) {
  if (params.radii.empty()) throw std::invalid_argument("at least one radius is required");
  for (double r : params.radii)
    if (!(r > 0.0)) throw std::invalid_argument("radii must be positive");
  if (!(params.spacing > 0.0)) throw std::invalid_argument("spacing must be positive");
  if (params.spacing > 0.1 + 1e-12) throw std::invalid_argument("spacing must not exceed 0.1 m");
  if (!(params.straight_length > 0.0)) throw std::invalid_argument("straight length must be positive");
  for (std::size_t k = 0; k < params.radii.size(); ++k) {
    const double prev = k == 0 ? params.radii[k] : params.radii[k - 1];
    if (!(params.connector_length > prev + params.radii[k]))
      throw std::invalid_argument("connector length must exceed the sum of adjacent radii");
  }

  detail::PathBuilder b(params.spacing, 0.0, 0.0, 0.0);
  b.add(0.5 * params.connector_length, 0.0);
  for (std::size_t k = 0; k < params.radii.size(); ++k) {
    const double r = params.radii[k];
    const double lobe = eight_lobe_angle(r, params.straight_length);
    if (k > 0) b.add(params.connector_length, 0.0);
    b.add(0.5 * r * lobe, 1.0 / r);
    b.add(params.straight_length, 0.0);
    b.add(r * lobe, -1.0 / r);
    b.add(params.straight_length, 0.0);
    b.add(0.5 * r * lobe, 1.0 / r);
  }
  b.add(0.5 * params.connector_length, 0.0);
  return PathSpec(std::move(b.pts));
}

inline PathSpec build_eight_shape(const std::vector<double>& radii, double straight_length, double spacing) {
  return build_eight_shape(EightShapeParams{radii, straight_length, spacing, 40.0});
}

/// Single closed circle starting at (radius, 0) heading +y (counter-clockwise).
inline PathSpec build_circle(double radius, double spacing, double turns = 1.0) {
  if (!(radius > 0.0) || !(spacing > 0.0)) throw std::invalid_argument("radius and spacing must be positive");
  detail::PathBuilder b(spacing, radius, 0.0, std::numbers::pi / 2.0);
  b.pts.front().kind = SegmentKind::curve;
  b.pts.front().curvature = 1.0 / radius;
  b.add(2.0 * std::numbers::pi * radius * turns, 1.0 / radius);
  return PathSpec(std::move(b.pts));
}

/// Straight line from the origin along +x.
inline PathSpec build_straight(double length, double spacing) {
  if (!(length > 0.0) || !(spacing > 0.0)) throw std::invalid_argument("length and spacing must be positive");
  detail::PathBuilder b(spacing, 0.0, 0.0, 0.0);
  b.add(length, 0.0);
  return PathSpec(std::move(b.pts));
}

struct ClosestPoint {
  std::size_t index{0};  // path sample nearest to the foot point
  double distance{0.0};  // to the polyline
  double s{0.0};         // arc length of the foot point
};

namespace detail {

/// Best foot point on the polyline segments [lo, hi]; ties keep the lowest index.
inline ClosestPoint closest_on_range(const PathSpec& path, const Eigen::Vector2d& q, std::size_t lo, std::size_t hi) {
  ClosestPoint best{lo, std::numeric_limits<double>::infinity(), path[lo].s};
  if (lo == hi) {
    best.distance = std::hypot(path[lo].x - q.x(), path[lo].y - q.y());
    return best;
  }
  for (std::size_t i = lo; i < hi; ++i) {
    const PathPoint& a = path[i];
    const PathPoint& b = path[i + 1];
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double w = len2 > 0.0 ? ((q.x() - a.x) * dx + (q.y() - a.y) * dy) / len2 : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    const double d = std::hypot(a.x + w * dx - q.x(), a.y + w * dy - q.y());
    if (d < best.distance) best = {w <= 0.5 ? i : i + 1, d, a.s + w * (b.s - a.s)};
  }
  return best;
}

}  // namespace detail

/// Exhaustive nearest point on the path polyline; ties resolve to the lowest index.
inline ClosestPoint closest_point(const PathSpec& path, const Eigen::Vector2d& q) {
  if (path.empty()) throw std::invalid_argument("closest_point on an empty path");
  return detail::closest_on_range(path, q, 0, path.size() - 1);
}

/// Warm-started closest-point search: after the first lookup only segments within
/// `window` metres of arc length around the previous match are scanned.
class PathCursor {
 public:
  explicit PathCursor(const PathSpec& path, double window = 5.0) : path_(&path), window_(window) {}

  /// Restricts the next search to the window around `index`.
  void reset(std::size_t index) { last_ = std::min(index, path_->size() - 1); }
  void clear() { last_.reset(); }
  [[nodiscard]] std::optional<std::size_t> last() const { return last_; }

  ClosestPoint locate(const Eigen::Vector2d& q) {
    ClosestPoint best;
    if (!last_) {
      best = closest_point(*path_, q);
    } else {
      const double s0 = (*path_)[*last_].s;
      const std::size_t lo = path_->index_at(s0 - window_);
      const std::size_t hi = std::min(path_->index_at(s0 + window_) + 1, path_->size() - 1);
      best = detail::closest_on_range(*path_, q, lo, hi);
    }
    last_ = best.index;
    return best;
  }

 private:
  const PathSpec* path_;
  double window_;
  std::optional<std::size_t> last_;
};

/// Horizon of reference poses for both vehicles plus steering references.
/// Yaw references are zero: the yaw weight is zero in the tracking cost.
struct ReferenceWindow {
  std::vector<Pose> tractor;
  std::vector<Pose> trailer;
  double delta_t_ref{0.0};
  double delta_i_ref{0.0};
  std::size_t tractor_anchor{0};
  std::size_t trailer_anchor{0};
};

/// N+1 poses starting `lookahead` metres ahead of the arc length s_closest and
/// advancing `step` metres per entry.
inline std::vector<Pose> lookahead_poses(const PathSpec& path, double s_closest, double lookahead, int horizon,
                                         double step) {
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int k = 0; k <= horizon; ++k) {
    Pose p = path.pose_at(s_closest + lookahead + step * k);
    p(2) = 0.0;
    out.push_back(p);
  }
  return out;
}

struct LookaheadConfig {
  double lookahead{1.6};          // [m] at the reference speed
  double lookahead_per_mps{0.0};  // extra metres per m/s of estimated speed
  int horizon{15};
  double v_ref{1.0};
  double dt{0.2};
  double search_window{5.0};
};

/// Per-controller look-ahead reference generation with one cursor per vehicle.
class ReferenceGenerator {
 public:
  ReferenceGenerator(const PathSpec& path, LookaheadConfig cfg)
      : path_(&path), cfg_(cfg), tractor_(path, cfg.search_window), trailer_(path, cfg.search_window) {
    if (cfg_.lookahead < 0.0) throw std::invalid_argument("lookahead must be non-negative");
  }

  PathCursor& tractor_cursor() { return tractor_; }
  PathCursor& trailer_cursor() { return trailer_; }

  [[nodiscard]] double lookahead_for(double speed) const {
    return cfg_.lookahead + cfg_.lookahead_per_mps * (speed - cfg_.v_ref);
  }

  ReferenceWindow generate(const VehicleState& est) {
    const ClosestPoint ct = tractor_.locate({est.x_t, est.y_t});
    const ClosestPoint ci = trailer_.locate({est.x_i, est.y_i});
    const double la = std::max(0.0, lookahead_for(est.v));
    const double step = cfg_.v_ref * cfg_.dt;
    ReferenceWindow w;
    w.tractor = lookahead_poses(*path_, ct.s, la, cfg_.horizon, step);
    w.trailer = lookahead_poses(*path_, ci.s, la, cfg_.horizon, step);
    w.tractor_anchor = path_->index_at(ct.s + la);
    w.trailer_anchor = path_->index_at(ci.s + la);
    return w;
  }

 private:
  const PathSpec* path_;
  LookaheadConfig cfg_;
  PathCursor tractor_;
  PathCursor trailer_;
};

inline void write_path_csv(const PathSpec& path, std::ostream& os) {
  os << "s,x,y,kind,curvature\n" << std::fixed << std::setprecision(6);
  for (const PathPoint& p : path.points())
    os << p.s << ',' << p.x << ',' << p.y << ',' << to_string(p.kind) << ',' << p.curvature << '\n';
}

/// Parses the CSV written by write_path_csv. Segment ids restart at kind or
/// curvature changes; headings are recovered from neighbouring points.
inline PathSpec read_path_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("path csv: missing header");
  if (line != "s,x,y,kind,curvature") throw std::runtime_error("path csv: unexpected header '" + line + "'");
  std::vector<PathPoint> pts;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& field : f)
      if (!std::getline(ss, field, ',')) throw std::runtime_error("path csv line " + std::to_string(lineno) + ": expected 5 fields");
    PathPoint p;
    try {
      p.s = std::stod(f[0]);
      p.x = std::stod(f[1]);
      p.y = std::stod(f[2]);
      p.curvature = std::stod(f[4]);
    } catch (const std::exception&) {
      throw std::runtime_error("path csv line " + std::to_string(lineno) + ": malformed number");
    }
    if (f[3] == "straight") p.kind = SegmentKind::straight;
    else if (f[3] == "curve") p.kind = SegmentKind::curve;
    else throw std::runtime_error("path csv line " + std::to_string(lineno) + ": unknown kind '" + f[3] + "'");
    if (!pts.empty()) {
      const PathPoint& prev = pts.back();
      p.segment_id = prev.segment_id + ((prev.kind != p.kind || prev.curvature != p.curvature) ? 1 : 0);
    }
    pts.push_back(p);
  }
  if (pts.empty()) throw std::runtime_error("path csv: no points");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t a = i == 0 ? 0 : i - 1;
    const std::size_t b = i + 1 < pts.size() ? i + 1 : i;
    double h = std::atan2(pts[b].y - pts[a].y, pts[b].x - pts[a].x);
    if (i > 0) h = unwrap_near(h, pts[i - 1].heading);
    pts[i].heading = h;
  }
  return PathSpec(std::move(pts));
}

}  // namespace ttmpc
