#include "plancraft/plan.hpp"

#include <cmath>
#include <numeric>

#include "plancraft/errors.hpp"

namespace plancraft {

std::string_view to_string(HeadKind h) {
  switch (h) {
    case HeadKind::WPS: return "WPS";
    case HeadKind::PATH: return "PATH";
    case HeadKind::PathWaypoints: return "P+WP";
  }
  return "?";
}

std::optional<HeadKind> head_kind_from_string(std::string_view s) {
  if (s == "WPS") return HeadKind::WPS;
  if (s == "PATH") return HeadKind::PATH;
  if (s == "P+WP") return HeadKind::PathWaypoints;
  return std::nullopt;
}

void check_presence(const PlanOutput& plan, HeadKind head) {
  if (plan.path_points.has_value() != has_path(head)) throw InvariantError("path_points", "presence does not match head");
  if (plan.waypoints.has_value() != has_waypoints(head)) throw InvariantError("waypoints", "presence does not match head");
  if (plan.speed_probs.has_value() != has_speed_classifier(head)) {
    throw InvariantError("speed_probs", "presence does not match head");
  }
  if (plan.path_points && plan.path_points->size() != kPathPoints) throw InvariantError("path_points", "expected 20 points");
  if (plan.waypoints && plan.waypoints->size() != kWaypoints) throw InvariantError("waypoints", "expected 8 points");
  if (plan.speed_probs) {
    double sum = 0.0;
    for (double p : *plan.speed_probs) {
      if (p < 0.0) throw InvariantError("speed_probs", "negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvariantError("speed_probs", "probabilities must sum to 1");
  }
}

}  // namespace plancraft
