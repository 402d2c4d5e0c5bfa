#include "plancraft/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace plancraft {

Pose to_ego_frame(const Pose& global, const Pose& ego) {
  const Vec2 local = point_to_ego_frame(global.position(), ego);
  return {local.x, local.y, normalize_angle(global.yaw - ego.yaw)};
}

Pose from_ego_frame(const Pose& local, const Pose& ego) {
  const Vec2 global = point_from_ego_frame(local.position(), ego);
  return {global.x, global.y, normalize_angle(local.yaw + ego.yaw)};
}

Vec2 point_to_ego_frame(const Vec2& global, const Pose& ego) {
  const double c = std::cos(ego.yaw);
  const double s = std::sin(ego.yaw);
  const double dx = global.x - ego.x;
  const double dy = global.y - ego.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 point_from_ego_frame(const Vec2& local, const Pose& ego) {
  const double c = std::cos(ego.yaw);
  const double s = std::sin(ego.yaw);
  return {ego.x + c * local.x - s * local.y, ego.y + s * local.x + c * local.y};
}

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw std::invalid_argument("polyline needs at least 2 points");
  cumulative_.resize(points_.size());
  cumulative_[0] = 0.0;
  for (std::size_t i = 1; i < points_.size(); ++i) {
    cumulative_[i] = cumulative_[i - 1] + (points_[i] - points_[i - 1]).norm();
  }
}

std::size_t Polyline::segment_index(double s) const {
  if (s <= 0.0) return 0;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
  if (idx == 0) return 0;
  return std::min(idx - 1, points_.size() - 2);
}

Vec2 Polyline::point_at(double s) const {
  const std::size_t i = segment_index(s);
  const Vec2 a = points_[i];
  const Vec2 b = points_[i + 1];
  const double seg = cumulative_[i + 1] - cumulative_[i];
  if (seg <= 0.0) return a;
  const double u = (s - cumulative_[i]) / seg;
  return a + (b - a) * u;
}

Vec2 Polyline::tangent_at(double s) const {
  std::size_t i = segment_index(s);
  Vec2 d = points_[i + 1] - points_[i];
  // skip zero-length segments
  while (d.norm() <= 0.0 && i + 2 < points_.size()) {
    ++i;
    d = points_[i + 1] - points_[i];
  }
  const double n = d.norm();
  return n > 0.0 ? d * (1.0 / n) : Vec2{1.0, 0.0};
}

double Polyline::heading_at(double s) const {
  const Vec2 t = tangent_at(s);
  return std::atan2(t.y, t.x);
}

Polyline::Projection Polyline::project(const Vec2& p) const {
  Projection best;
  double best_d2 = std::numeric_limits<double>::infinity();
  const std::size_t n = points_.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Vec2 a = points_[i];
    const Vec2 ab = points_[i + 1] - a;
    const double len2 = ab.dot(ab);
    if (len2 <= 0.0) continue;
    double u = (p - a).dot(ab) / len2;
    const double lo = (i == 0) ? -std::numeric_limits<double>::infinity() : 0.0;
    const double hi = (i + 2 == n) ? std::numeric_limits<double>::infinity() : 1.0;
    u = std::clamp(u, lo, hi);
    const Vec2 q = a + ab * u;
    const double d2 = (p - q).dot(p - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      best.s = cumulative_[i] + u * std::sqrt(len2);
      best.point = q;
      const Vec2 t = ab * (1.0 / std::sqrt(len2));
      best.lateral = t.cross(p - q) >= 0.0 ? std::sqrt(d2) : -std::sqrt(d2);
    }
  }
  return best;
}

std::vector<Vec2> resample_chord(const Polyline& curve, double start_s, const Vec2& start,
                                 std::size_t count, double spacing) {
  std::vector<Vec2> out;
  out.reserve(count);
  const auto& pts = curve.points();
  const std::size_t nseg = pts.size() - 1;

  Vec2 center = start;
  double s_cur = start_s;
  for (std::size_t k = 0; k < count; ++k) {
    bool found = false;
    // Search segments from the one containing s_cur; the first and last
    // segments are extended so the walk can run off either end.
    std::size_t i = 0;
    if (s_cur > 0.0) {
      while (i + 1 < nseg && curve.arc_length_at(i + 1) <= s_cur) ++i;
    }
    for (; i < nseg && !found; ++i) {
      const Vec2 a = pts[i];
      const Vec2 ab = pts[i + 1] - a;
      const double seg = ab.norm();
      if (seg <= 0.0) continue;
      const double u_min = (s_cur - curve.arc_length_at(i)) / seg;
      const double u_max = (i + 1 == nseg) ? std::numeric_limits<double>::infinity() : 1.0;
      // |a + u ab - c|^2 = r^2
      const Vec2 ac = a - center;
      const double qa = ab.dot(ab);
      const double qb = 2.0 * ab.dot(ac);
      const double qc = ac.dot(ac) - spacing * spacing;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc < 0.0) continue;
      const double sq = std::sqrt(disc);
      const double roots[2] = {(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)};
      for (double u : roots) {
        if (u > u_min + 1e-12 && u <= u_max) {
          const Vec2 p = a + ab * u;
          out.push_back(p);
          center = p;
          s_cur = curve.arc_length_at(i) + u * seg;
          found = true;
          break;
        }
      }
    }
    if (!found) {
      // Only reachable when the start lies far off the curve; continue along
      // the end tangent.
      const Vec2 t = curve.tangent_at(curve.length());
      center = center + t * spacing;
      s_cur += spacing;
      out.push_back(center);
    }
  }
  return out;
}

Polyline offset_polyline(const Polyline& line, double offset) {
  const auto& pts = line.points();
  std::vector<Vec2> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Vec2 t{0.0, 0.0};
    if (i > 0) {
      const Vec2 d = pts[i] - pts[i - 1];
      if (d.norm() > 0.0) t = t + d * (1.0 / d.norm());
    }
    if (i + 1 < pts.size()) {
      const Vec2 d = pts[i + 1] - pts[i];
      if (d.norm() > 0.0) t = t + d * (1.0 / d.norm());
    }
    const double n = t.norm();
    t = n > 0.0 ? t * (1.0 / n) : Vec2{1.0, 0.0};
    out[i] = pts[i] + Vec2{-t.y, t.x} * offset;
  }
  return Polyline(std::move(out));
}

Polyline reversed(const Polyline& line) {
  std::vector<Vec2> pts(line.points().rbegin(), line.points().rend());
  return Polyline(std::move(pts));
}

}  // namespace plancraft
