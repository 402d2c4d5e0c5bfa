#ifndef PLANCRAFT_PERTURB_HPP_
#define PLANCRAFT_PERTURB_HPP_

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "plancraft/model.hpp"
#include "plancraft/plan.hpp"
#include "plancraft/scene.hpp"
#include "plancraft/world.hpp"

namespace plancraft::perturb {

enum class OpKind { TranslateObject, RotateEgo, TranslateEgo, RemoveObject, AddObject, SetSpeedLimit };

std::string_view to_string(OpKind k);
std::optional<OpKind> op_kind_from_string(std::string_view s);

/// One edit. Object ids are indices into the input scene's object list;
/// added objects continue the numbering. Offsets are in the current ego frame.
struct Op {
  OpKind kind = OpKind::RotateEgo;
  int id = -1;
  double dx = 0.0;
  double dy = 0.0;
  /// Radians.
  double angle = 0.0;
  scene::OrientedBox box;
  int speed_limit_index = 0;

  static Op translate_object(int id, double dx, double dy);
  static Op rotate_ego(double radians);
  static Op translate_ego(double dx, double dy);
  static Op remove_object(int id);
  static Op add_object(const scene::OrientedBox& box);
  static Op set_speed_limit(int index);
};

struct PerturbationSpec {
  std::vector<Op> ops;
};

nlohmann::json to_json(const Op& op);
/// Angles travel as degrees ("deg"). SchemaError names the offending field.
Op op_from_json(const nlohmann::json& j, const std::string& field);
nlohmann::json to_json(const PerturbationSpec& spec);
PerturbationSpec spec_from_json(const nlohmann::json& j);

/// Road context for exact re-rendering when the scene came from a known map.
/// Both callbacks take the new ego pose in the frame of the input scene.
struct SceneContext {
  std::function<scene::RoadRaster(const Pose&)> raster;
  std::function<scene::RoutePoints(const Pose&)> route;
};

struct Applied {
  scene::Scene scene;
  /// New ego pose in the frame of the input scene.
  Pose ego;
  /// Id of every object left in `scene.objects`.
  std::vector<int> ids;
  /// Indices of ego ops that left the ego outside the drivable area.
  std::vector<int> off_drivable_ops;
  bool off_drivable() const { return !off_drivable_ops.empty(); }
};

/// Applies the ops in order, then re-expresses everything in the final ego
/// frame and re-applies the range filter. Without a context, the raster is
/// resampled (nearest cell, Background outside the old grid) and route points
/// are re-expressed. Unresolved ids raise InvariantError naming the op.
Applied apply(const scene::Scene& scene, const PerturbationSpec& spec, const SceneContext* context = nullptr);

enum class Axis { EgoRotation, EgoDistanceAlongRoute, SpeedLimitIndex, ObjectLateralOffset };
std::string_view to_string(Axis a);
std::optional<Axis> axis_from_string(std::string_view s);
/// "deg", "m" or "index".
std::string_view axis_units(Axis a);

struct SweepRequest {
  Axis axis = Axis::EgoRotation;
  double from = 0.0;
  double to = 30.0;
  int steps = 31;
  /// Objects moved by ObjectLateralOffset.
  std::vector<int> objects;
  /// Object whose gap to the ego is recorded per point.
  std::optional<int> reference;
  /// Applied before the swept op.
  PerturbationSpec base;
};

nlohmann::json to_json(const SweepRequest& r);
SweepRequest sweep_request_from_json(const nlohmann::json& j);

struct SweepRecord {
  double value = 0.0;
  std::optional<PlanOutput> plan;
  /// Decoded by the model's head; NaN when inference failed.
  double target_speed = 0.0;
  std::optional<double> min_clearance;
  /// Longitudinal bumper gap from the ego to the reference object.
  std::optional<double> reference_distance;
  /// Reference x minus the last waypoint x: where the plan stops relative to it.
  std::optional<double> stop_gap;
  bool off_drivable = false;
  std::string error;
};

struct SweepResult {
  Axis axis = Axis::EgoRotation;
  std::vector<SweepRecord> records;
  std::string model_id;
  std::string scene_id;
};

std::vector<double> axis_values(const SweepRequest& r);

/// One record per axis value, in axis order. Inference faults are recorded
/// per point. Deterministic for identical arguments.
SweepResult sweep(const scene::Scene& scene, const SweepRequest& request, const model::PlannerModel& model,
                  const SceneContext* context = nullptr);

nlohmann::json to_json(const SweepResult& r);
/// Two columns: axis value, target speed.
std::string to_csv(const SweepResult& r);

/// Consecutive target-speed increases above `threshold`, as (axis value of the
/// later point, increase). Failed points are skipped.
std::vector<std::pair<double, double>> jump_detector(const SweepResult& r, double threshold = 3.0);

/// Minimum signed distance between the ego box swept along the plan's path
/// (waypoints when the plan has no path) and any non-stop-line obstacle.
/// Poses are sampled every <= 0.25 m from the origin, heading along the
/// tangent. Infinity without obstacles; InvariantError on a degenerate path.
double min_clearance(const PlanOutput& plan, double half_length, double half_width,
                     const std::vector<scene::OrientedBox>& obstacles);

/// Short hex digest of a scene's wire form.
std::string scene_id(const scene::Scene& scene);

// Probe presets.

/// Picks objects of a snapshot by world role, class and extent.
struct Selector {
  std::optional<sim::ActorRole> role;
  std::optional<scene::ObjectClass> cls;
  std::optional<double> min_half_length;
  std::optional<double> max_half_length;
};

struct PresetOp {
  Op op;
  /// Expands the op to every matching object (TranslateObject, RemoveObject),
  /// or for TranslateEgo moves the ego onto the first match plus (dx, dy).
  std::optional<Selector> select;
};

struct Snapshot {
  /// "anchor_distance": ego center within `value` m of the scenario anchor;
  /// "stopped": speed below 0.05 m/s after the first second;
  /// "triggered": `value` s after the scenario trigger; "time": at `value` s.
  std::string until = "anchor_distance";
  double value = 25.0;
  double max_time = 90.0;
};

struct Preset {
  std::string name;
  std::string description;
  sim::ScenarioKind scenario = sim::ScenarioKind::ConstructionObstacle;
  std::uint64_t seed = 0;
  Snapshot snapshot;
  std::vector<PresetOp> ops;
  /// Without a sweep the preset compares the base and perturbed plans.
  struct Sweep {
    Axis axis = Axis::EgoRotation;
    double from = 0.0;
    double to = 30.0;
    int steps = 31;
    std::optional<Selector> objects;
    std::optional<Selector> reference;
  };
  std::optional<Sweep> sweep;
};

const std::vector<Preset>& builtin_presets();
/// Built-in name or a path to a preset JSON file.
Preset find_preset(const std::string& name_or_path);
nlohmann::json to_json(const Preset& p);
Preset preset_from_json(const nlohmann::json& j);

/// Expert rollout of the preset's scenario up to the snapshot condition.
sim::World snapshot_world(const Preset& p);
/// Exact map-based re-rendering around a world's ego.
SceneContext world_context(const sim::World& world);

struct PresetRun {
  std::string preset;
  scene::Scene base_scene;
  std::optional<SweepResult> sweep;
  /// Compare presets: plans before and after the ops.
  std::optional<PlanOutput> base_plan;
  std::optional<PlanOutput> perturbed_plan;
  std::optional<scene::Scene> perturbed_scene;
  bool off_drivable = false;
};

/// `scene_override` replaces the snapshot scene (road context is then resampled).
PresetRun run_preset(const Preset& p, const model::PlannerModel& model,
                     const std::optional<scene::Scene>& scene_override = std::nullopt);
nlohmann::json to_json(const PresetRun& r);

}  // namespace plancraft::perturb

#endif  // PLANCRAFT_PERTURB_HPP_
