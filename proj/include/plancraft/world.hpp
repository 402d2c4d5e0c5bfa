#ifndef PLANCRAFT_WORLD_HPP_
#define PLANCRAFT_WORLD_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "plancraft/control.hpp"
#include "plancraft/geometry.hpp"
#include "plancraft/road_map.hpp"
#include "plancraft/scene.hpp"

namespace plancraft::sim {

inline constexpr double kEgoHalfLength = 2.45;
inline constexpr double kEgoHalfWidth = 1.0;
inline constexpr double kStationarySpeed = 0.1;

struct EgoState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double speed = 0.0;
  double wheelbase = 2.9;

  Pose pose() const { return {x, y, yaw}; }
  Vec2 position() const { return {x, y}; }
  scene::OrientedBox box() const;
};

/// Kinematic bicycle update. Throws InvariantError on non-finite or
/// out-of-range controls and on dt outside (0, 0.1].
EgoState step_ego(const EgoState& state, const control::ControlCommand& control, double dt);

enum class ScenarioKind {
  ConstructionObstacle,
  ConstructionObstacleTwoWays,
  ParkedObstacle,
  Accident,
  ParkingCutIn,
  PedestrianCrossing,
  RedLight,
  StopSign,
  InvadingTurn,
};
inline constexpr std::array<ScenarioKind, 9> kAllScenarioKinds = {
    ScenarioKind::ConstructionObstacle, ScenarioKind::ConstructionObstacleTwoWays,
    ScenarioKind::ParkedObstacle,       ScenarioKind::Accident,
    ScenarioKind::ParkingCutIn,         ScenarioKind::PedestrianCrossing,
    ScenarioKind::RedLight,             ScenarioKind::StopSign,
    ScenarioKind::InvadingTurn,
};
std::string_view to_string(ScenarioKind k);
std::optional<ScenarioKind> scenario_kind_from_string(std::string_view s);

enum class ActorRole {
  Static,
  Traffic,
  CutIn,
  CrossingPedestrian,
  Walker,
  TrafficLightLine,
  StopSignLine,
};

struct Actor {
  int id = 0;
  scene::ObjectClass cls = scene::ObjectClass::Vehicle;
  ActorRole role = ActorRole::Static;
  Pose pose;
  double half_length = 0.5;
  double half_width = 0.5;
  double speed = 0.0;
  bool active = true;
  bool visible = true;
  /// Part of the triggered scenario; removed when the scenario times out.
  bool scenario = false;

  // Path-following state for moving roles.
  int path = -1;
  double s = 0.0;
  double lateral = 0.0;
  double lateral_start = 0.0;
  double target_speed = 0.0;
  bool yields = false;
  bool triggered = false;
  double trigger_time = 0.0;

  scene::OrientedBox box() const;
};

struct Junction {
  Vec2 center;
  double radius = 8.0;
  /// Route arc length where the ego lane enters the junction.
  double entry_s = 0.0;
};

/// Immutable geometry shared by every copy of a world.
struct Layout {
  RoadMap map;
  Polyline route;
  /// Paths followed by traffic and pedestrians.
  std::vector<Polyline> paths;
  std::optional<Junction> junction;
};

struct Spawn {
  double time = 0.0;
  int path = 0;
  double s = 0.0;
  double speed = 0.0;
  double lateral = 0.0;
  scene::ObjectClass cls = scene::ObjectClass::Vehicle;
  double half_length = 2.4;
  double half_width = 0.95;
  bool yields = true;
  bool scenario = false;
};

struct ScenarioParams {
  /// Route arc length of the scenario anchor (obstacle, crossing, stop line).
  double anchor_s = 70.0;
  double trigger_distance = 25.0;
  /// 0 places obstacles in the ego lane, 1 in the opposite lane.
  int obstacle_lane = 0;
  /// Mean oncoming vehicles per second (0 disables oncoming traffic).
  double oncoming_rate = 0.0;
  double oncoming_speed = 5.5;
  /// One long gap (m) in an otherwise regular oncoming stream; 0 for none.
  double oncoming_gap = 0.0;
  double cutin_speed_threshold = 5.0;
  double timeout = 60.0;
  /// -1 picks index 0 or 1 from the seed.
  int speed_limit_index = 0;
  /// Red phase length for RedLight.
  double red_duration = 20.0;
  bool emergency_vehicle = true;

  bool operator==(const ScenarioParams&) const = default;
};

struct ScenarioState {
  bool triggered = false;
  double trigger_time = 0.0;
  bool timed_out = false;
  bool light_red = false;
  bool stop_satisfied = false;
  std::vector<Spawn> schedule;
  std::size_t next_spawn = 0;
};

struct World {
  std::shared_ptr<const Layout> layout;
  ScenarioKind kind = ScenarioKind::ConstructionObstacle;
  ScenarioParams params;
  std::uint64_t seed = 0;
  double time = 0.0;
  EgoState ego;
  int speed_limit_index = 0;
  scene::SpeedLimitTable speed_limits = scene::default_speed_limits();
  std::vector<Actor> actors;
  ScenarioState scenario;
  double stationary_time = 0.0;
  double max_route_s = 0.0;
  int next_actor_id = 0;

  double speed_limit() const { return speed_limits[static_cast<std::size_t>(speed_limit_index)]; }
  Polyline::Projection ego_on_route() const;
  const Actor* find_actor(int id) const;
};

/// Adds a path-following traffic actor from a schedule entry.
void spawn_actor(World& world, const Spawn& spawn);

/// Advances scripted actors, triggers, traffic lights and spawns by dt.
void tick_scenario(World& world, double dt);

/// Ego-frame observation of the world (range filtered, stop lines only while
/// active, pedestrians only while moving).
/// `actor_ids`, when given, receives the actor id of each scene object.
scene::Scene make_scene(const World& world, bool with_raster = true, std::vector<int>* actor_ids = nullptr);

/// Route points: 20 points at 1 m chords from the ego's projection.
scene::RoutePoints route_points(const World& world);

/// Actors that can be collided with (stop lines excluded).
bool is_physical(const Actor& a);

}  // namespace plancraft::sim

#endif  // PLANCRAFT_WORLD_HPP_
