#ifndef PLANCRAFT_EXPERT_HPP_
#define PLANCRAFT_EXPERT_HPP_

#include <vector>

#include <json.hpp>

#include "plancraft/plan.hpp"
#include "plancraft/world.hpp"

namespace plancraft::expert {

struct ExpertConfig {
  /// Lateral gap kept to static obstacles when passing them.
  double clearance = 0.5;
  double longitudinal_margin = 2.0;
  double gap_decel = 3.0;
  double gap_min = 4.0;
  double stop_decel = 3.0;
  double stop_line_margin = 1.0;
  double creep_distance = 0.25;
  double lateral_accel = 3.0;
  double recovery_length = 10.0;
  double encroach_clearance = 0.3;
  double max_right_shift = -0.7;
  /// Oncoming-lane check: acceleration from rest assumed for the overtake,
  /// plus time and distance buffers.
  double overtake_accel = 2.0;
  double overtake_time_margin = 2.0;
  double overtake_distance_margin = 10.0;
  double emergency_radius = 40.0;
  double max_speed = 20.0;
  /// Lateral jitter on lane transitions (0 disables).
  double trajectory_noise = 0.0;
};

nlohmann::json to_json(const ExpertConfig& c);
ExpertConfig expert_config_from_json(const nlohmann::json& j);

struct PlanLabel {
  std::vector<Vec2> path_points;
  std::vector<Vec2> waypoints;
  double target_speed = 0.0;
  /// False when no feasible path exists and the label is a full stop.
  bool feasible = true;
};

/// Diagnostics of one planning call.
struct ExpertTrace {
  bool overtaking = false;
  bool committed = false;
  bool waiting_for_oncoming = false;
  double max_lateral = 0.0;
  /// Speed cap at the ego position before integration.
  double speed_cap = 0.0;
};

PlanLabel expert_plan(const sim::World& world, const ExpertConfig& config = {}, ExpertTrace* trace = nullptr);

/// min(speed limit, gap-limited speed, stop-line-limited speed) at the ego.
double longitudinal_target(const sim::World& world, const ExpertConfig& config = {});

/// Full-stop label: waypoints collapsed at the ego, path straight ahead.
PlanLabel full_stop_label();

PlanOutput to_plan_output(const PlanLabel& label);

/// Throws InvariantError if the label violates spacing or count invariants.
void validate_label(const PlanLabel& label, double max_speed);

}  // namespace plancraft::expert

#endif  // PLANCRAFT_EXPERT_HPP_
