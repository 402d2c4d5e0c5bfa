#ifndef PLANCRAFT_SCENARIOS_HPP_
#define PLANCRAFT_SCENARIOS_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/world.hpp"

namespace plancraft::sim {

/// Procedural two-lane road. `straight` runs along +x, `curve` adds a left
/// arc, `junction` adds a perpendicular two-lane cross road at `junction_s`.
struct MapSpec {
  std::string type = "straight";
  double length = 170.0;
  double curve_start = 50.0;
  double curve_radius = 35.0;
  double curve_angle_deg = 90.0;
  double junction_s = 90.0;
  bool shoulder = false;

  bool operator==(const MapSpec&) const = default;
};

struct ScenarioDef {
  std::string name;
  ScenarioKind kind = ScenarioKind::ConstructionObstacle;
  ScenarioParams params;
  MapSpec map;
  /// Ego route in global coordinates (the ego lane centerline).
  std::vector<Vec2> route;
};

/// Path indices shared by every layout.
inline constexpr int kPathEgoLane = 0;
inline constexpr int kPathOncomingLane = 1;
inline constexpr int kPathRightSidewalk = 2;
inline constexpr int kPathLeftSidewalk = 3;

inline constexpr double kLaneWidth = 3.5;

/// Built-in definition for each template; routes are derived from the map.
ScenarioDef default_scenario(ScenarioKind kind);
std::vector<Vec2> default_route(const MapSpec& map);

nlohmann::json to_json(const ScenarioDef& def);
/// Throws SchemaError with a field path on malformed documents.
ScenarioDef scenario_from_json(const nlohmann::json& j);
ScenarioDef load_scenario(const std::string& path);
/// All `*.json` scenario definitions in a directory, sorted by file name.
std::vector<ScenarioDef> load_scenario_dir(const std::string& dir);

std::shared_ptr<const Layout> build_layout(const MapSpec& map, const std::vector<Vec2>& route);

/// Instantiates a scenario: actors, traffic schedule and per-seed jitter of
/// placements and timings. Deterministic in (def, seed).
World build_world(const ScenarioDef& def, std::uint64_t seed);

/// Ego-lane Frenet placement helper: pose at route arc length s, lateral d.
Pose route_pose(const Polyline& route, double s, double d);

}  // namespace plancraft::sim

#endif  // PLANCRAFT_SCENARIOS_HPP_
