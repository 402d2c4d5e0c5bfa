#ifndef PLANCRAFT_EPISODE_HPP_
#define PLANCRAFT_EPISODE_HPP_

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "plancraft/control.hpp"
#include "plancraft/plan.hpp"
#include "plancraft/world.hpp"

namespace plancraft::sim {

enum class InfractionKind {
  CollisionPedestrian,
  CollisionVehicle,
  CollisionStatic,
  RedLight,
  StopSign,
  ScenarioTimeout,
  RouteDeviation,
  Blocked,
};
inline constexpr std::array<InfractionKind, 8> kAllInfractionKinds = {
    InfractionKind::CollisionPedestrian, InfractionKind::CollisionVehicle, InfractionKind::CollisionStatic,
    InfractionKind::RedLight,            InfractionKind::StopSign,         InfractionKind::ScenarioTimeout,
    InfractionKind::RouteDeviation,      InfractionKind::Blocked,
};
std::string_view to_string(InfractionKind k);
std::optional<InfractionKind> infraction_kind_from_string(std::string_view s);
inline bool is_collision(InfractionKind k) {
  return k == InfractionKind::CollisionPedestrian || k == InfractionKind::CollisionVehicle ||
         k == InfractionKind::CollisionStatic;
}

inline constexpr double kBlockedTime = 90.0;
inline constexpr double kRouteDeviation = 10.0;

struct InfractionEvent {
  InfractionKind kind = InfractionKind::CollisionVehicle;
  double time = 0.0;
  Vec2 position;
  /// Actor involved, -1 when none.
  int actor_id = -1;
};

/// Events caused by the transition prev -> next. Collisions fire on contact
/// onset only. Vehicle contacts while the ego is stationary are dropped and,
/// when `suppressed` is given, counted there.
std::vector<InfractionEvent> detect_infractions(const World& prev, const World& next, int* suppressed = nullptr);

/// Maps the current world and its observation to a plan. May throw.
using PlannerFn = std::function<PlanOutput(const World&, const scene::Scene&)>;

struct EpisodeConfig {
  double sim_dt = 0.05;
  /// Planner is queried every this many simulation steps.
  int planner_every = 2;
  double time_limit = 120.0;
  /// Keep the observed scenes (without rasters) in the step records.
  bool record_scenes = true;
  control::ControllerConfig controller;
};

struct StepRecord {
  double time = 0.0;
  EgoState ego;
  control::ControlCommand control;
  bool scenario_active = false;
  /// Present on planner ticks.
  std::optional<scene::Scene> scene;
  std::optional<PlanOutput> plan;
};

struct EpisodeLog {
  std::string scenario;
  ScenarioKind kind = ScenarioKind::ConstructionObstacle;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<InfractionEvent> infractions;
  int suppressed_collisions = 0;
  double route_length = 0.0;
  double distance_completed = 0.0;
  double duration = 0.0;
  /// route_end, blocked, route_deviation, time_limit or planner_failure.
  std::string termination;
  std::string planner_failure;
};

EpisodeLog run_episode(World world, const PlannerFn& planner, const EpisodeConfig& config = {});

nlohmann::json infraction_to_json(const InfractionEvent& e);
InfractionEvent infraction_from_json(const nlohmann::json& j);

/// JSON Lines: one record per step and a trailing summary record.
void write_episode_log(const std::string& path, const EpisodeLog& log);
EpisodeLog read_episode_log(const std::string& path);

}  // namespace plancraft::sim

#endif  // PLANCRAFT_EPISODE_HPP_
