#include "plancraft/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "plancraft/errors.hpp"

namespace plancraft::scene {

namespace {

constexpr std::array<std::string_view, kNumObjectClasses> kClassNames = {
    "Vehicle", "EmergencyVehicle", "Pedestrian", "StaticObstacle", "TrafficLightStopLine", "StopSignStopLine"};

double segment_point_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return (p - (a + ab * u)).norm();
}

// Projects corners onto an axis and returns the overlap length of the two
// intervals (negative when separated).
double axis_overlap(const std::array<Vec2, 4>& ca, const std::array<Vec2, 4>& cb, const Vec2& axis) {
  double amin = std::numeric_limits<double>::infinity(), amax = -amin;
  double bmin = amin, bmax = -amin;
  for (const auto& c : ca) {
    const double p = c.dot(axis);
    amin = std::min(amin, p);
    amax = std::max(amax, p);
  }
  for (const auto& c : cb) {
    const double p = c.dot(axis);
    bmin = std::min(bmin, p);
    bmax = std::max(bmax, p);
  }
  return std::min(amax, bmax) - std::max(amin, bmin);
}

std::array<Vec2, 4> box_axes(const OrientedBox& a, const OrientedBox& b) {
  return {Vec2{std::cos(a.yaw), std::sin(a.yaw)}, Vec2{-std::sin(a.yaw), std::cos(a.yaw)},
          Vec2{std::cos(b.yaw), std::sin(b.yaw)}, Vec2{-std::sin(b.yaw), std::cos(b.yaw)}};
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::string_view to_string(ObjectClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

std::optional<ObjectClass> object_class_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<ObjectClass>(i);
  }
  return std::nullopt;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = Vec2{std::cos(yaw), std::sin(yaw)} * half_length;
  const Vec2 l = Vec2{-std::sin(yaw), std::cos(yaw)} * half_width;
  const Vec2 c{center_x, center_y};
  return {c + f + l, c - f + l, c - f - l, c + f - l};
}

std::optional<std::pair<int, int>> RoadRaster::cell_of(const Vec2& p) {
  const double r = std::floor((kRasterHalfExtent - p.x) / kRasterResolution);
  const double c = std::floor((kRasterHalfExtent - p.y) / kRasterResolution);
  if (r < 0 || c < 0 || r >= kRasterSize || c >= kRasterSize) return std::nullopt;
  return std::make_pair(static_cast<int>(r), static_cast<int>(c));
}

Vec2 RoadRaster::cell_center(int row, int col) {
  return {kRasterHalfExtent - (row + 0.5) * kRasterResolution, kRasterHalfExtent - (col + 0.5) * kRasterResolution};
}

SpeedLimitTable default_speed_limits() {
  constexpr double kKmh = 1.0 / 3.6;
  return {30.0 * kKmh, 50.0 * kKmh, 90.0 * kKmh, 120.0 * kKmh};
}

bool in_range(double x, double y) {
  if (x >= 0.0) {
    const double ex = x / 100.0;
    const double ey = y / 50.0;
    return ex * ex + ey * ey <= 1.0;
  }
  return x * x + y * y <= 50.0 * 50.0;
}

std::vector<OrientedBox> filter_by_range(const std::vector<OrientedBox>& objects) {
  std::vector<OrientedBox> out;
  out.reserve(objects.size());
  std::copy_if(objects.begin(), objects.end(), std::back_inserter(out),
               [](const OrientedBox& b) { return in_range(b.center_x, b.center_y); });
  return out;
}

bool box_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  for (const auto& axis : box_axes(a, b)) {
    if (axis_overlap(ca, cb, axis) < 0.0) return false;
  }
  return true;
}

double box_signed_distance(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  if (box_overlap(a, b)) {
    double depth = std::numeric_limits<double>::infinity();
    for (const auto& axis : box_axes(a, b)) depth = std::min(depth, axis_overlap(ca, cb, axis));
    return -depth;
  }
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    const Vec2 a0 = ca[i], a1 = ca[(i + 1) % 4];
    const Vec2 b0 = cb[i], b1 = cb[(i + 1) % 4];
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, segment_point_distance(cb[j], a0, a1));
      best = std::min(best, segment_point_distance(ca[j], b0, b1));
    }
  }
  return best;
}

void validate_box(const OrientedBox& box, const std::string& field) {
  if (!finite(box.center_x) || !finite(box.center_y) || !finite(box.yaw) || !finite(box.half_length) ||
      !finite(box.half_width) || !finite(box.speed)) {
    throw InvariantError(field, "non-finite value");
  }
  if (box.half_length <= 0.0) throw InvariantError(field + ".half_length", "must be positive");
  if (box.half_width <= 0.0) throw InvariantError(field + ".half_width", "must be positive");
  if (box.speed < 0.0) throw InvariantError(field + ".speed", "must be non-negative");
  if (box.yaw <= -std::numbers::pi || box.yaw > std::numbers::pi) {
    throw InvariantError(field + ".yaw", "must lie in (-pi, pi]");
  }
  if (is_stop_line(box.cls) && box.speed != 0.0) {
    throw InvariantError(field + ".speed", "stop lines are stationary");
  }
}

void validate_route(const RoutePoints& route) {
  for (std::size_t i = 0; i < kRoutePoints; ++i) {
    if (!finite(route.points[i].x) || !finite(route.points[i].y)) {
      throw InvariantError("route[" + std::to_string(i) + "]", "non-finite point");
    }
  }
  for (std::size_t i = 0; i + 1 < kRoutePoints; ++i) {
    const double d = (route.points[i + 1] - route.points[i]).norm();
    if (std::abs(d - kRouteSpacing) > 1e-6) {
      throw InvariantError("route[" + std::to_string(i + 1) + "]",
                           "route points must be spaced 1 m apart (got " + std::to_string(d) + ")");
    }
  }
}

void validate_scene(const Scene& scene) {
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto field = "objects[" + std::to_string(i) + "]";
    validate_box(scene.objects[i], field);
    if (!in_range(scene.objects[i].center_x, scene.objects[i].center_y)) {
      throw InvariantError(field, "object outside perception range");
    }
  }
  validate_route(scene.route);
  if (scene.speed_limit_index < 0 || scene.speed_limit_index > 3) {
    throw InvariantError("speed_limit_index", "must be in [0, 3]");
  }
  if (scene.raster.cells.size() != static_cast<std::size_t>(kRasterSize * kRasterSize)) {
    throw InvariantError("raster", "must hold 128x128 cells");
  }
  for (auto v : scene.raster.cells) {
    if (v > 3) throw InvariantError("raster", "cell value out of range");
  }
  if (scene.ego_speed && (!finite(*scene.ego_speed) || *scene.ego_speed < 0.0)) {
    throw InvariantError("ego_speed", "must be finite and non-negative");
  }
}

}  // namespace plancraft::scene
