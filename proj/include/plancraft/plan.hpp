#ifndef PLANCRAFT_PLAN_HPP_
#define PLANCRAFT_PLAN_HPP_

#include <optional>
#include <string_view>
#include <vector>

#include "plancraft/geometry.hpp"

namespace plancraft {

inline constexpr std::size_t kPathPoints = 20;
inline constexpr std::size_t kWaypoints = 8;
inline constexpr double kWaypointDt = 0.25;

enum class HeadKind { WPS, PATH, PathWaypoints };

std::string_view to_string(HeadKind h);
std::optional<HeadKind> head_kind_from_string(std::string_view s);

inline bool has_path(HeadKind h) { return h != HeadKind::WPS; }
inline bool has_waypoints(HeadKind h) { return h != HeadKind::PATH; }
inline bool has_speed_classifier(HeadKind h) { return h == HeadKind::PATH; }

/// Planner output in the ego frame. Which members are present depends on the
/// head that produced it; `target_speed` is always the decoded speed command.
struct PlanOutput {
  std::optional<std::vector<Vec2>> path_points;
  std::optional<std::vector<Vec2>> waypoints;
  std::optional<std::vector<double>> speed_probs;
  double target_speed = 0.0;
};

/// Throws InvariantError if the presence pattern does not match `head`.
void check_presence(const PlanOutput& plan, HeadKind head);

}  // namespace plancraft

#endif  // PLANCRAFT_PLAN_HPP_
