#ifndef PLANCRAFT_GEOMETRY_HPP_
#define PLANCRAFT_GEOMETRY_HPP_

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace plancraft {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose&) const = default;
};

/// Expresses a global pose in the frame of `ego` (x forward, y left, yaw CCW).
Pose to_ego_frame(const Pose& global, const Pose& ego);
/// Inverse of to_ego_frame.
Pose from_ego_frame(const Pose& local, const Pose& ego);
Vec2 point_to_ego_frame(const Vec2& global, const Pose& ego);
Vec2 point_from_ego_frame(const Vec2& local, const Pose& ego);

/// Piecewise-linear curve with cached cumulative arc length.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  double arc_length_at(std::size_t i) const { return cumulative_[i]; }

  /// Point at arc length s; extrapolates linearly past either end.
  Vec2 point_at(double s) const;
  /// Unit tangent at arc length s.
  Vec2 tangent_at(double s) const;
  double heading_at(double s) const;

  struct Projection {
    double s = 0.0;       // arc length of the closest point
    double lateral = 0.0; // signed distance, positive to the left
    Vec2 point;
  };
  /// Closest-point projection onto the polyline (segments extended at the ends).
  Projection project(const Vec2& p) const;

 private:
  std::size_t segment_index(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

/// Walks along `curve` from `start` and emits `count` points whose consecutive
/// chord length is exactly `spacing` (circle-polyline intersections). The
/// first emitted point is `spacing` away from `start`.
std::vector<Vec2> resample_chord(const Polyline& curve, double start_s, const Vec2& start,
                                 std::size_t count, double spacing);

/// Offsets every vertex along the averaged vertex normal (positive = left).
Polyline offset_polyline(const Polyline& line, double offset);
Polyline reversed(const Polyline& line);

/// Smooth 0->1 blend on [0, 1] with zero slope at both ends.
inline double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace plancraft

#endif  // PLANCRAFT_GEOMETRY_HPP_
