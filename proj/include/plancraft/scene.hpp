#ifndef PLANCRAFT_SCENE_HPP_
#define PLANCRAFT_SCENE_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "plancraft/geometry.hpp"

namespace plancraft::scene {

enum class ObjectClass : std::uint8_t {
  Vehicle = 0,
  EmergencyVehicle,
  Pedestrian,
  StaticObstacle,
  TrafficLightStopLine,
  StopSignStopLine,
};
inline constexpr std::size_t kNumObjectClasses = 6;

std::string_view to_string(ObjectClass c);
std::optional<ObjectClass> object_class_from_string(std::string_view name);

inline bool is_stop_line(ObjectClass c) {
  return c == ObjectClass::TrafficLightStopLine || c == ObjectClass::StopSignStopLine;
}

/// Oriented box in the ego frame (x forward, y left, yaw CCW).
struct OrientedBox {
  double center_x = 0.0;
  double center_y = 0.0;
  double yaw = 0.0;
  double half_length = 0.5;
  double half_width = 0.5;
  double speed = 0.0;
  ObjectClass cls = ObjectClass::Vehicle;

  Pose pose() const { return {center_x, center_y, yaw}; }
  std::array<Vec2, 4> corners() const;
  bool operator==(const OrientedBox&) const = default;
};

inline constexpr std::size_t kRoutePoints = 20;
inline constexpr double kRouteSpacing = 1.0;

struct RoutePoints {
  std::array<Vec2, kRoutePoints> points{};
  bool operator==(const RoutePoints&) const = default;
};

enum class RasterClass : std::uint8_t { Background = 0, DrivableRoad = 1, SolidMarking = 2, BrokenMarking = 3 };

inline constexpr int kRasterSize = 128;
inline constexpr double kRasterResolution = 0.5;
inline constexpr double kRasterHalfExtent = kRasterSize * kRasterResolution / 2.0;

/// 128x128 class grid, ego-aligned and ego-centered. Row 0 is the front edge
/// (x = +32 m), column 0 the left edge (y = +32 m).
struct RoadRaster {
  std::vector<std::uint8_t> cells = std::vector<std::uint8_t>(kRasterSize * kRasterSize, 0);

  RasterClass at(int row, int col) const {
    return static_cast<RasterClass>(cells[static_cast<std::size_t>(row * kRasterSize + col)]);
  }
  void set(int row, int col, RasterClass c) {
    cells[static_cast<std::size_t>(row * kRasterSize + col)] = static_cast<std::uint8_t>(c);
  }
  bool operator==(const RoadRaster&) const = default;

  /// Cell containing an ego-frame point, or nullopt outside the grid.
  static std::optional<std::pair<int, int>> cell_of(const Vec2& p);
  static Vec2 cell_center(int row, int col);
};

/// Speed limits selectable by Scene::speed_limit_index, in m/s.
using SpeedLimitTable = std::array<double, 4>;
SpeedLimitTable default_speed_limits();

struct Scene {
  std::vector<OrientedBox> objects;
  RoutePoints route;
  int speed_limit_index = 0;
  RoadRaster raster;
  /// Only consumed by models configured to observe ego speed.
  std::optional<double> ego_speed;

  bool operator==(const Scene&) const = default;
};

/// True iff the ego-frame point lies in the perception region: an ellipse
/// (100 m along x, 50 m along y) for x >= 0 and a 50 m disc behind.
bool in_range(double x, double y);
std::vector<OrientedBox> filter_by_range(const std::vector<OrientedBox>& objects);

/// Separating-axis overlap test; touching boxes count as overlapping.
bool box_overlap(const OrientedBox& a, const OrientedBox& b);
/// Euclidean gap between two boxes, or minus the penetration depth when they overlap.
double box_signed_distance(const OrientedBox& a, const OrientedBox& b);

/// Throws InvariantError naming the offending field.
void validate_box(const OrientedBox& box, const std::string& field);
void validate_route(const RoutePoints& route);
void validate_scene(const Scene& scene);

}  // namespace plancraft::scene

#endif  // PLANCRAFT_SCENE_HPP_
