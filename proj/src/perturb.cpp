#include "plancraft/perturb.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "plancraft/control.hpp"
#include "plancraft/errors.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/hash.hpp"
#include "plancraft/parallel.hpp"
#include "plancraft/road_map.hpp"
#include "plancraft/scenarios.hpp"
#include "plancraft/scene_json.hpp"

namespace plancraft::perturb {

using nlohmann::json;
using scene::OrientedBox;
using scene::Scene;

namespace {

constexpr std::array<OpKind, 6> kAllOps = {OpKind::TranslateObject, OpKind::RotateEgo,   OpKind::TranslateEgo,
                                           OpKind::RemoveObject,    OpKind::AddObject,   OpKind::SetSpeedLimit};
constexpr std::array<Axis, 4> kAllAxes = {Axis::EgoRotation, Axis::EgoDistanceAlongRoute, Axis::SpeedLimitIndex,
                                          Axis::ObjectLateralOffset};

constexpr std::array<std::pair<sim::ActorRole, std::string_view>, 7> kRoles = {{
    {sim::ActorRole::Static, "Static"},
    {sim::ActorRole::Traffic, "Traffic"},
    {sim::ActorRole::CutIn, "CutIn"},
    {sim::ActorRole::CrossingPedestrian, "CrossingPedestrian"},
    {sim::ActorRole::Walker, "Walker"},
    {sim::ActorRole::TrafficLightLine, "TrafficLightLine"},
    {sim::ActorRole::StopSignLine, "StopSignLine"},
}};

std::string_view role_name(sim::ActorRole r) {
  for (const auto& [role, name] : kRoles) {
    if (role == r) return name;
  }
  return "?";
}

template <class T>
T get_field(const json& j, const std::string& key, const std::string& field) {
  if (!j.contains(key)) throw SchemaError(field + "." + key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(field + "." + key, "wrong type");
  }
}

void check_keys(const json& j, const std::string& field, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw SchemaError(field, "expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) throw SchemaError(field + "." + key, "unknown key");
  }
}

bool drivable_at(const scene::RoadRaster& raster, const Vec2& p) {
  const auto cell = scene::RoadRaster::cell_of(p);
  return cell && raster.at(cell->first, cell->second) != scene::RasterClass::Background;
}

/// Route points continued from the ego's projection onto the given route.
scene::RoutePoints resample_route(const scene::RoutePoints& route) {
  std::vector<Vec2> pts(route.points.begin(), route.points.end());
  const Vec2 tail = pts.back() - pts[pts.size() - 2];
  pts.push_back(pts.back() + tail * (100.0 / std::max(tail.norm(), 1e-9)));
  const Polyline line(std::move(pts));
  const auto proj = line.project({0.0, 0.0});
  const auto out = resample_chord(line, proj.s, proj.point, scene::kRoutePoints, scene::kRouteSpacing);
  scene::RoutePoints r;
  std::copy(out.begin(), out.end(), r.points.begin());
  return r;
}

}  // namespace

std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::TranslateObject: return "TranslateObject";
    case OpKind::RotateEgo: return "RotateEgo";
    case OpKind::TranslateEgo: return "TranslateEgo";
    case OpKind::RemoveObject: return "RemoveObject";
    case OpKind::AddObject: return "AddObject";
    case OpKind::SetSpeedLimit: return "SetSpeedLimit";
  }
  return "?";
}

std::optional<OpKind> op_kind_from_string(std::string_view s) {
  for (auto k : kAllOps) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

Op Op::translate_object(int id, double dx, double dy) {
  Op o;
  o.kind = OpKind::TranslateObject;
  o.id = id;
  o.dx = dx;
  o.dy = dy;
  return o;
}

Op Op::rotate_ego(double radians) {
  Op o;
  o.kind = OpKind::RotateEgo;
  o.angle = radians;
  return o;
}

Op Op::translate_ego(double dx, double dy) {
  Op o;
  o.kind = OpKind::TranslateEgo;
  o.dx = dx;
  o.dy = dy;
  return o;
}

Op Op::remove_object(int id) {
  Op o;
  o.kind = OpKind::RemoveObject;
  o.id = id;
  return o;
}

Op Op::add_object(const OrientedBox& box) {
  Op o;
  o.kind = OpKind::AddObject;
  o.box = box;
  return o;
}

Op Op::set_speed_limit(int index) {
  Op o;
  o.kind = OpKind::SetSpeedLimit;
  o.speed_limit_index = index;
  return o;
}

json to_json(const Op& op) {
  json j{{"op", to_string(op.kind)}};
  switch (op.kind) {
    case OpKind::TranslateObject: j["id"] = op.id; [[fallthrough]];
    case OpKind::TranslateEgo:
      j["dx"] = op.dx;
      j["dy"] = op.dy;
      break;
    case OpKind::RotateEgo: j["deg"] = rad_to_deg(op.angle); break;
    case OpKind::RemoveObject: j["id"] = op.id; break;
    case OpKind::AddObject: j["box"] = box_to_json(op.box); break;
    case OpKind::SetSpeedLimit: j["index"] = op.speed_limit_index; break;
  }
  return j;
}

Op op_from_json(const json& j, const std::string& field) {
  if (!j.is_object()) throw SchemaError(field, "expected an object");
  const auto name = get_field<std::string>(j, "op", field);
  const auto kind = op_kind_from_string(name);
  if (!kind) throw SchemaError(field + ".op", "unknown op " + name);
  Op op;
  op.kind = *kind;
  switch (*kind) {
    case OpKind::TranslateObject:
      check_keys(j, field, {"op", "id", "dx", "dy"});
      op.id = get_field<int>(j, "id", field);
      op.dx = get_field<double>(j, "dx", field);
      op.dy = get_field<double>(j, "dy", field);
      break;
    case OpKind::TranslateEgo:
      check_keys(j, field, {"op", "dx", "dy"});
      op.dx = get_field<double>(j, "dx", field);
      op.dy = get_field<double>(j, "dy", field);
      break;
    case OpKind::RotateEgo:
      check_keys(j, field, {"op", "deg"});
      op.angle = deg_to_rad(get_field<double>(j, "deg", field));
      break;
    case OpKind::RemoveObject:
      check_keys(j, field, {"op", "id"});
      op.id = get_field<int>(j, "id", field);
      break;
    case OpKind::AddObject:
      check_keys(j, field, {"op", "box"});
      if (!j.contains("box")) throw SchemaError(field + ".box", "missing");
      op.box = box_from_json(j["box"], field + ".box");
      break;
    case OpKind::SetSpeedLimit:
      check_keys(j, field, {"op", "index"});
      op.speed_limit_index = get_field<int>(j, "index", field);
      break;
  }
  return op;
}

json to_json(const PerturbationSpec& spec) {
  json ops = json::array();
  for (const auto& op : spec.ops) ops.push_back(to_json(op));
  return {{"ops", ops}};
}

PerturbationSpec spec_from_json(const json& j) {
  check_keys(j, "spec", {"ops"});
  PerturbationSpec spec;
  if (!j.contains("ops")) return spec;
  if (!j["ops"].is_array()) throw SchemaError("spec.ops", "expected an array");
  for (std::size_t i = 0; i < j["ops"].size(); ++i) {
    spec.ops.push_back(op_from_json(j["ops"][i], "spec.ops[" + std::to_string(i) + "]"));
  }
  return spec;
}

Applied apply(const Scene& in, const PerturbationSpec& spec, const SceneContext* context) {
  struct Item {
    OrientedBox box;  // input-scene frame
    int id;
    bool alive;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < in.objects.size(); ++i) items.push_back({in.objects[i], static_cast<int>(i), true});
  int next_id = static_cast<int>(in.objects.size());
  Pose ego;
  Applied out;
  out.scene.speed_limit_index = in.speed_limit_index;
  out.scene.ego_speed = in.ego_speed;

  auto drivable = [&](const Pose& e) {
    if (context && context->raster) return drivable_at(context->raster(e), {0.0, 0.0});
    return drivable_at(in.raster, e.position());
  };

  for (std::size_t k = 0; k < spec.ops.size(); ++k) {
    const Op& op = spec.ops[k];
    const std::string field = "ops[" + std::to_string(k) + "]";
    auto find = [&]() -> Item& {
      for (auto& it : items) {
        if (it.id == op.id && it.alive) return it;
      }
      throw InvariantError(field + ".id", "no object with id " + std::to_string(op.id));
    };
    switch (op.kind) {
      case OpKind::TranslateObject: {
        Item& it = find();
        const Vec2 d = rotate({op.dx, op.dy}, ego.yaw);
        it.box.center_x += d.x;
        it.box.center_y += d.y;
        break;
      }
      case OpKind::RotateEgo:
        ego.yaw += op.angle;
        if (!drivable(ego)) out.off_drivable_ops.push_back(static_cast<int>(k));
        break;
      case OpKind::TranslateEgo: {
        const Vec2 d = rotate({op.dx, op.dy}, ego.yaw);
        ego.x += d.x;
        ego.y += d.y;
        if (!drivable(ego)) out.off_drivable_ops.push_back(static_cast<int>(k));
        break;
      }
      case OpKind::RemoveObject: find().alive = false; break;
      case OpKind::AddObject: {
        scene::validate_box(op.box, field + ".box");
        OrientedBox b = op.box;
        const Pose g = from_ego_frame(b.pose(), ego);
        b.center_x = g.x;
        b.center_y = g.y;
        b.yaw = g.yaw;
        items.push_back({b, next_id++, true});
        break;
      }
      case OpKind::SetSpeedLimit:
        if (op.speed_limit_index < 0 || op.speed_limit_index > 3) {
          throw InvariantError(field + ".index", "speed limit index must be in [0, 3]");
        }
        out.scene.speed_limit_index = op.speed_limit_index;
        break;
    }
  }

  const bool identity = ego.x == 0.0 && ego.y == 0.0 && ego.yaw == 0.0;
  out.ego = ego;
  for (const auto& it : items) {
    if (!it.alive) continue;
    OrientedBox b = it.box;
    if (!identity) {
      const Pose l = to_ego_frame(b.pose(), ego);
      b.center_x = l.x;
      b.center_y = l.y;
      b.yaw = l.yaw;
    }
    if (!scene::in_range(b.center_x, b.center_y)) continue;
    out.scene.objects.push_back(b);
    out.ids.push_back(it.id);
  }
  if (identity) {
    out.scene.route = in.route;
    out.scene.raster = in.raster;
  } else {
    if (context && context->route) {
      out.scene.route = context->route(ego);
    } else {
      for (std::size_t i = 0; i < scene::kRoutePoints; ++i) out.scene.route.points[i] = point_to_ego_frame(in.route.points[i], ego);
    }
    out.scene.raster = context && context->raster ? context->raster(ego) : scene::resample_raster(in.raster, ego);
  }
  scene::validate_scene(out.scene);
  return out;
}

std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::EgoRotation: return "EgoRotation";
    case Axis::EgoDistanceAlongRoute: return "EgoDistanceAlongRoute";
    case Axis::SpeedLimitIndex: return "SpeedLimitIndex";
    case Axis::ObjectLateralOffset: return "ObjectLateralOffset";
  }
  return "?";
}

std::optional<Axis> axis_from_string(std::string_view s) {
  for (auto a : kAllAxes) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

std::string_view axis_units(Axis a) {
  switch (a) {
    case Axis::EgoRotation: return "deg";
    case Axis::SpeedLimitIndex: return "index";
    default: return "m";
  }
}

json to_json(const SweepRequest& r) {
  json j{{"axis", to_string(r.axis)}, {"from", r.from}, {"to", r.to}, {"steps", r.steps}, {"objects", r.objects}};
  j["reference"] = r.reference ? json(*r.reference) : json(nullptr);
  j["base"] = to_json(r.base);
  return j;
}

SweepRequest sweep_request_from_json(const json& j) {
  check_keys(j, "sweep", {"axis", "from", "to", "steps", "objects", "reference", "base"});
  SweepRequest r;
  const auto name = get_field<std::string>(j, "axis", "sweep");
  const auto axis = axis_from_string(name);
  if (!axis) throw SchemaError("sweep.axis", "unknown axis " + name);
  r.axis = *axis;
  r.from = get_field<double>(j, "from", "sweep");
  r.to = get_field<double>(j, "to", "sweep");
  r.steps = get_field<int>(j, "steps", "sweep");
  if (j.contains("objects")) r.objects = get_field<std::vector<int>>(j, "objects", "sweep");
  if (j.contains("reference") && !j["reference"].is_null()) r.reference = get_field<int>(j, "reference", "sweep");
  if (j.contains("base")) r.base = spec_from_json(j["base"]);
  if (r.axis == Axis::ObjectLateralOffset && r.objects.empty()) {
    throw SchemaError("sweep.objects", "ObjectLateralOffset needs at least one object id");
  }
  axis_values(r);
  return r;
}

std::vector<double> axis_values(const SweepRequest& r) {
  if (r.steps < 2) throw ConfigError("sweep.steps: need at least 2 points");
  if (!(r.from != r.to) || !std::isfinite(r.from) || !std::isfinite(r.to)) {
    throw ConfigError("sweep: from and to must be finite and distinct");
  }
  std::vector<double> v;
  for (int i = 0; i < r.steps; ++i) v.push_back(r.from + (r.to - r.from) * i / (r.steps - 1));
  if (r.axis == Axis::SpeedLimitIndex) {
    for (auto& x : v) {
      x = std::round(x);
      if (x < 0.0 || x > 3.0) throw ConfigError("sweep: speed limit indices must lie in [0, 3]");
    }
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] == v[i - 1]) throw ConfigError("sweep: speed limit steps must hit distinct indices");
    }
  }
  return v;
}

std::string scene_id(const Scene& s) { return sha256_hex(scene_to_json(s, RasterFormat::RunLength).dump()).substr(0, 16); }

SweepResult sweep(const Scene& scene, const SweepRequest& request, const model::PlannerModel& model,
                  const SceneContext* context) {
  const auto values = axis_values(request);
  SweepResult result;
  result.axis = request.axis;
  result.model_id = model.id();
  result.scene_id = scene_id(scene);
  result.records.resize(values.size());

  // Route frame after the base ops, for moves along the route.
  std::optional<scene::RoutePoints> base_route;
  if (request.axis == Axis::EgoDistanceAlongRoute) base_route = apply(scene, request.base, context).scene.route;

  parallel_for(values.size(), [&](std::size_t i) {
    SweepRecord& rec = result.records[i];
    const double v = values[i];
    rec.value = v;
    rec.target_speed = std::numeric_limits<double>::quiet_NaN();
    try {
      PerturbationSpec spec = request.base;
      bool resample = false;
      switch (request.axis) {
        case Axis::EgoRotation: spec.ops.push_back(Op::rotate_ego(deg_to_rad(v))); break;
        case Axis::EgoDistanceAlongRoute: {
          std::vector<Vec2> pts(base_route->points.begin(), base_route->points.end());
          const Polyline line(std::move(pts));
          const double s = line.project({0.0, 0.0}).s + v;
          const Vec2 p = line.point_at(s);
          spec.ops.push_back(Op::translate_ego(p.x, p.y));
          spec.ops.push_back(Op::rotate_ego(line.heading_at(s)));
          resample = !(context && context->route);
          break;
        }
        case Axis::SpeedLimitIndex: spec.ops.push_back(Op::set_speed_limit(static_cast<int>(v))); break;
        case Axis::ObjectLateralOffset:
          for (int id : request.objects) spec.ops.push_back(Op::translate_object(id, 0.0, v));
          break;
      }
      Applied a = apply(scene, spec, context);
      if (resample) a.scene.route = resample_route(a.scene.route);
      rec.off_drivable = a.off_drivable();
      const PlanOutput plan = model.infer(a.scene);
      rec.target_speed = plan.target_speed;
      try {
        std::vector<OrientedBox> obstacles;
        for (const auto& b : a.scene.objects) {
          if (!scene::is_stop_line(b.cls)) obstacles.push_back(b);
        }
        const double c = min_clearance(plan, sim::kEgoHalfLength, sim::kEgoHalfWidth, obstacles);
        if (std::isfinite(c)) rec.min_clearance = c;
      } catch (const InvariantError&) {
      }
      if (request.reference) {
        for (std::size_t k = 0; k < a.ids.size(); ++k) {
          if (a.ids[k] != *request.reference) continue;
          const auto& b = a.scene.objects[k];
          rec.reference_distance = b.center_x - b.half_length - sim::kEgoHalfLength;
          if (plan.waypoints) rec.stop_gap = b.center_x - plan.waypoints->back().x;
        }
      }
      rec.plan = plan;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
  });
  return result;
}

json to_json(const SweepResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json records = json::array();
  for (const auto& rec : r.records) {
    records.push_back({{"value", rec.value},
                       {"target_speed", std::isfinite(rec.target_speed) ? json(rec.target_speed) : json(nullptr)},
                       {"plan", rec.plan ? plan_to_json(*rec.plan) : json(nullptr)},
                       {"min_clearance", opt(rec.min_clearance)},
                       {"reference_distance", opt(rec.reference_distance)},
                       {"stop_gap", opt(rec.stop_gap)},
                       {"off_drivable", rec.off_drivable},
                       {"error", rec.error}});
  }
  return {{"axis", to_string(r.axis)},
          {"units", axis_units(r.axis)},
          {"model", r.model_id},
          {"scene", r.scene_id},
          {"records", records}};
}

std::string to_csv(const SweepResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << to_string(r.axis) << "_" << axis_units(r.axis) << ",target_speed_mps\n";
  for (const auto& rec : r.records) {
    os << rec.value << ",";
    if (std::isfinite(rec.target_speed)) os << rec.target_speed;
    os << "\n";
  }
  return os.str();
}

std::vector<std::pair<double, double>> jump_detector(const SweepResult& r, double threshold) {
  std::vector<std::pair<double, double>> jumps;
  const SweepRecord* prev = nullptr;
  for (const auto& rec : r.records) {
    if (!std::isfinite(rec.target_speed)) continue;
    if (prev && rec.target_speed - prev->target_speed > threshold) {
      jumps.emplace_back(rec.value, rec.target_speed - prev->target_speed);
    }
    prev = &rec;
  }
  return jumps;
}

double min_clearance(const PlanOutput& plan, double half_length, double half_width,
                     const std::vector<OrientedBox>& obstacles) {
  const auto* pts = plan.path_points ? &*plan.path_points : plan.waypoints ? &*plan.waypoints : nullptr;
  if (!pts) throw InvariantError("plan", "no path points or waypoints");
  std::vector<Vec2> line{{0.0, 0.0}};
  for (const auto& p : *pts) {
    if ((p - line.back()).norm() > 1e-9) line.push_back(p);
  }
  if (line.size() < 2) throw InvariantError("plan", "degenerate path");
  const Polyline path(std::move(line));
  const double length = path.length();
  const int n = std::max(1, static_cast<int>(std::ceil(length / 0.25)));
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const double s = length * i / n;
    const Vec2 p = path.point_at(s);
    OrientedBox ego{p.x, p.y, path.heading_at(s), half_length, half_width, 0.0, scene::ObjectClass::Vehicle};
    for (const auto& o : obstacles) best = std::min(best, scene::box_signed_distance(ego, o));
  }
  return best;
}

// Presets.

namespace {

json selector_to_json(const Selector& s) {
  json j = json::object();
  if (s.role) j["role"] = role_name(*s.role);
  if (s.cls) j["class"] = scene::to_string(*s.cls);
  if (s.min_half_length) j["min_half_length"] = *s.min_half_length;
  if (s.max_half_length) j["max_half_length"] = *s.max_half_length;
  return j;
}

Selector selector_from_json(const json& j, const std::string& field) {
  check_keys(j, field, {"role", "class", "min_half_length", "max_half_length"});
  Selector s;
  if (j.contains("role")) {
    const auto name = get_field<std::string>(j, "role", field);
    for (const auto& [role, n] : kRoles) {
      if (n == name) s.role = role;
    }
    if (!s.role) throw SchemaError(field + ".role", "unknown role " + name);
  }
  if (j.contains("class")) {
    const auto name = get_field<std::string>(j, "class", field);
    s.cls = scene::object_class_from_string(name);
    if (!s.cls) throw SchemaError(field + ".class", "unknown class " + name);
  }
  if (j.contains("min_half_length")) s.min_half_length = get_field<double>(j, "min_half_length", field);
  if (j.contains("max_half_length")) s.max_half_length = get_field<double>(j, "max_half_length", field);
  return s;
}

std::vector<int> resolve(const Selector& sel, const Scene& scene, const sim::World* world, const std::vector<int>& actor_ids,
                         const std::string& field) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& b = scene.objects[i];
    if (sel.cls && b.cls != *sel.cls) continue;
    if (sel.min_half_length && b.half_length < *sel.min_half_length) continue;
    if (sel.max_half_length && b.half_length > *sel.max_half_length) continue;
    if (sel.role) {
      const sim::Actor* a = world && i < actor_ids.size() ? world->find_actor(actor_ids[i]) : nullptr;
      if (!a || a->role != *sel.role) continue;
    }
    ids.push_back(static_cast<int>(i));
  }
  if (ids.empty()) throw InvariantError(field, "selector matches no object in the scene");
  return ids;
}

Preset make_preset(std::string name, std::string description, sim::ScenarioKind kind, Snapshot snap) {
  Preset p;
  p.name = std::move(name);
  p.description = std::move(description);
  p.scenario = kind;
  p.snapshot = snap;
  return p;
}

Selector by_class(scene::ObjectClass c) {
  Selector s;
  s.cls = c;
  return s;
}

Selector by_role(sim::ActorRole r) {
  Selector s;
  s.role = r;
  return s;
}

std::vector<Preset> make_builtin_presets() {
  using scene::ObjectClass;
  using sim::ScenarioKind;
  Selector sign = by_class(ObjectClass::StaticObstacle);
  sign.min_half_length = 0.25;
  Selector cones = by_class(ObjectClass::StaticObstacle);
  cones.max_half_length = 0.25;

  std::vector<Preset> out;
  {
    auto p = make_preset("fig2_translate", "Construction site shifted laterally across both lanes.",
                         ScenarioKind::ConstructionObstacle, {"anchor_distance", 30.0, 60.0});
    p.sweep = Preset::Sweep{Axis::ObjectLateralOffset, -3.5, 3.5, 15, by_class(ObjectClass::StaticObstacle), sign};
    out.push_back(p);
  }
  {
    auto p = make_preset("fig2_cones", "Construction site with the cones removed, leaving the warning sign.",
                         ScenarioKind::ConstructionObstacle, {"anchor_distance", 30.0, 60.0});
    p.ops.push_back({Op::remove_object(-1), cones});
    out.push_back(p);
  }
  {
    auto p = make_preset("fig3_distance", "Ego moved towards a construction site along the route.",
                         ScenarioKind::ConstructionObstacle, {"anchor_distance", 40.0, 60.0});
    p.sweep = Preset::Sweep{Axis::EgoDistanceAlongRoute, 0.0, 30.0, 16, std::nullopt, sign};
    out.push_back(p);
  }
  {
    auto p = make_preset("fig5_rotation", "Ego rotated while waiting behind a construction site for oncoming traffic.",
                         ScenarioKind::ConstructionObstacleTwoWays, {"stopped", 0.0, 60.0});
    p.sweep = Preset::Sweep{Axis::EgoRotation, 0.0, 30.0, 31, std::nullopt, std::nullopt};
    out.push_back(p);
  }
  {
    auto p = make_preset("fig7_cutin", "Ego moved towards a parked vehicle that has started to cut in.",
                         ScenarioKind::ParkingCutIn, {"triggered", 0.5, 60.0});
    p.sweep = Preset::Sweep{Axis::EgoDistanceAlongRoute, -5.0, 25.0, 31, std::nullopt, by_role(sim::ActorRole::CutIn)};
    out.push_back(p);
  }
  {
    auto p = make_preset("fig9_speedlimit", "Stopping point in front of a crossing pedestrian under each speed limit.",
                         ScenarioKind::PedestrianCrossing, {"triggered", 1.5, 60.0});
    p.sweep = Preset::Sweep{Axis::SpeedLimitIndex, 0.0, 3.0, 4, std::nullopt,
                            by_role(sim::ActorRole::CrossingPedestrian)};
    out.push_back(p);
  }
  {
    auto p = make_preset("fig10_postcrash", "Ego placed overlapping a wrecked vehicle.", ScenarioKind::Accident,
                         {"anchor_distance", 25.0, 60.0});
    Selector wreck = by_class(ObjectClass::Vehicle);
    wreck.role = sim::ActorRole::Static;
    p.ops.push_back({Op::translate_ego(-3.0, 0.0), wreck});
    out.push_back(p);
  }
  return out;
}

}  // namespace

const std::vector<Preset>& builtin_presets() {
  static const std::vector<Preset> presets = make_builtin_presets();
  return presets;
}

json to_json(const Preset& p) {
  json ops = json::array();
  for (const auto& po : p.ops) {
    json j = to_json(po.op);
    if (po.select) {
      j.erase("id");
      j["select"] = selector_to_json(*po.select);
    }
    ops.push_back(j);
  }
  json j{{"name", p.name},
         {"description", p.description},
         {"scenario", sim::to_string(p.scenario)},
         {"seed", p.seed},
         {"snapshot", {{"until", p.snapshot.until}, {"value", p.snapshot.value}, {"max_time", p.snapshot.max_time}}},
         {"ops", ops}};
  if (p.sweep) {
    json s{{"axis", to_string(p.sweep->axis)}, {"from", p.sweep->from}, {"to", p.sweep->to}, {"steps", p.sweep->steps}};
    if (p.sweep->objects) s["objects"] = selector_to_json(*p.sweep->objects);
    if (p.sweep->reference) s["reference"] = selector_to_json(*p.sweep->reference);
    j["sweep"] = s;
  } else {
    j["sweep"] = nullptr;
  }
  return j;
}

Preset preset_from_json(const json& j) {
  check_keys(j, "preset", {"name", "description", "scenario", "seed", "snapshot", "ops", "sweep"});
  Preset p;
  p.name = get_field<std::string>(j, "name", "preset");
  if (j.contains("description")) p.description = get_field<std::string>(j, "description", "preset");
  const auto kind_name = get_field<std::string>(j, "scenario", "preset");
  const auto kind = sim::scenario_kind_from_string(kind_name);
  if (!kind) throw SchemaError("preset.scenario", "unknown scenario " + kind_name);
  p.scenario = *kind;
  if (j.contains("seed")) p.seed = get_field<std::uint64_t>(j, "seed", "preset");
  if (j.contains("snapshot")) {
    const auto& s = j["snapshot"];
    check_keys(s, "preset.snapshot", {"until", "value", "max_time"});
    if (s.contains("until")) p.snapshot.until = get_field<std::string>(s, "until", "preset.snapshot");
    if (s.contains("value")) p.snapshot.value = get_field<double>(s, "value", "preset.snapshot");
    if (s.contains("max_time")) p.snapshot.max_time = get_field<double>(s, "max_time", "preset.snapshot");
    const auto& u = p.snapshot.until;
    if (u != "anchor_distance" && u != "stopped" && u != "triggered" && u != "time") {
      throw SchemaError("preset.snapshot.until", "unknown condition " + u);
    }
  }
  if (j.contains("ops")) {
    if (!j["ops"].is_array()) throw SchemaError("preset.ops", "expected an array");
    for (std::size_t i = 0; i < j["ops"].size(); ++i) {
      const std::string field = "preset.ops[" + std::to_string(i) + "]";
      json o = j["ops"][i];
      PresetOp po;
      if (o.is_object() && o.contains("select")) {
        po.select = selector_from_json(o["select"], field + ".select");
        o.erase("select");
        if (!o.contains("id") && (o.value("op", "") == "TranslateObject" || o.value("op", "") == "RemoveObject")) {
          o["id"] = -1;
        }
      }
      po.op = op_from_json(o, field);
      if (po.select && po.op.kind != OpKind::TranslateObject && po.op.kind != OpKind::RemoveObject &&
          po.op.kind != OpKind::TranslateEgo) {
        throw SchemaError(field + ".select", "selectors apply to TranslateObject, RemoveObject and TranslateEgo");
      }
      p.ops.push_back(po);
    }
  }
  if (j.contains("sweep") && !j["sweep"].is_null()) {
    const auto& s = j["sweep"];
    check_keys(s, "preset.sweep", {"axis", "from", "to", "steps", "objects", "reference"});
    Preset::Sweep sw;
    const auto name = get_field<std::string>(s, "axis", "preset.sweep");
    const auto axis = axis_from_string(name);
    if (!axis) throw SchemaError("preset.sweep.axis", "unknown axis " + name);
    sw.axis = *axis;
    sw.from = get_field<double>(s, "from", "preset.sweep");
    sw.to = get_field<double>(s, "to", "preset.sweep");
    sw.steps = get_field<int>(s, "steps", "preset.sweep");
    if (s.contains("objects")) sw.objects = selector_from_json(s["objects"], "preset.sweep.objects");
    if (s.contains("reference")) sw.reference = selector_from_json(s["reference"], "preset.sweep.reference");
    if (sw.axis == Axis::ObjectLateralOffset && !sw.objects) {
      throw SchemaError("preset.sweep.objects", "ObjectLateralOffset needs an object selector");
    }
    p.sweep = sw;
  }
  return p;
}

Preset find_preset(const std::string& name_or_path) {
  for (const auto& p : builtin_presets()) {
    if (p.name == name_or_path) return p;
  }
  std::ifstream f(name_or_path);
  if (!f) throw ConfigError("unknown preset " + name_or_path);
  try {
    return preset_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw SchemaError("preset", std::string("invalid JSON: ") + e.what());
  }
}

sim::World snapshot_world(const Preset& p) {
  sim::World w = sim::build_world(sim::default_scenario(p.scenario), p.seed);
  control::PlanFollower follower;
  control::ControlCommand command;
  constexpr double kDt = 0.05;
  const auto& snap = p.snapshot;
  auto done = [&]() {
    if (snap.until == "anchor_distance") return w.params.anchor_s - w.ego_on_route().s <= snap.value;
    if (snap.until == "stopped") return w.time > 1.0 && w.ego.speed < 0.05;
    if (snap.until == "triggered") return w.scenario.triggered && w.time - w.scenario.trigger_time >= snap.value - 1e-9;
    return w.time >= snap.value - 1e-9;
  };
  for (long k = 0; !done(); ++k) {
    if (w.time >= snap.max_time) {
      throw InvariantError("preset.snapshot", "condition '" + snap.until + "' not reached within max_time");
    }
    if (k % 2 == 0) command = follower.command(expert::to_plan_output(expert::expert_plan(w)), w.ego.speed);
    w.ego = sim::step_ego(w.ego, command, kDt);
    sim::tick_scenario(w, kDt);
  }
  return w;
}

SceneContext world_context(const sim::World& world) {
  const Pose base = world.ego.pose();
  auto layout = world.layout;
  SceneContext c;
  c.raster = [layout, base](const Pose& e) { return scene::render_road_raster(layout->map, from_ego_frame(e, base)); };
  c.route = [layout, base](const Pose& e) {
    sim::World tmp;
    tmp.layout = layout;
    const Pose g = from_ego_frame(e, base);
    tmp.ego.x = g.x;
    tmp.ego.y = g.y;
    tmp.ego.yaw = g.yaw;
    return sim::route_points(tmp);
  };
  return c;
}

PresetRun run_preset(const Preset& p, const model::PlannerModel& model, const std::optional<Scene>& scene_override) {
  std::optional<sim::World> world;
  std::vector<int> actor_ids;
  Scene base;
  SceneContext context;
  const SceneContext* ctx = nullptr;
  if (scene_override) {
    base = *scene_override;
    scene::validate_scene(base);
  } else {
    world = snapshot_world(p);
    base = sim::make_scene(*world, true, &actor_ids);
    context = world_context(*world);
    ctx = &context;
  }
  const sim::World* wp = world ? &*world : nullptr;

  PerturbationSpec spec;
  for (std::size_t i = 0; i < p.ops.size(); ++i) {
    const auto& po = p.ops[i];
    if (!po.select) {
      spec.ops.push_back(po.op);
      continue;
    }
    const auto ids = resolve(*po.select, base, wp, actor_ids, "preset.ops[" + std::to_string(i) + "].select");
    if (po.op.kind == OpKind::TranslateEgo) {
      const auto& b = base.objects[static_cast<std::size_t>(ids.front())];
      spec.ops.push_back(Op::translate_ego(b.center_x + po.op.dx, b.center_y + po.op.dy));
      continue;
    }
    for (int id : ids) {
      Op op = po.op;
      op.id = id;
      spec.ops.push_back(op);
    }
  }

  PresetRun run;
  run.preset = p.name;
  run.base_scene = base;
  if (p.sweep) {
    SweepRequest req;
    req.axis = p.sweep->axis;
    req.from = p.sweep->from;
    req.to = p.sweep->to;
    req.steps = p.sweep->steps;
    req.base = spec;
    if (p.sweep->objects) req.objects = resolve(*p.sweep->objects, base, wp, actor_ids, "preset.sweep.objects");
    if (p.sweep->reference) req.reference = resolve(*p.sweep->reference, base, wp, actor_ids, "preset.sweep.reference").front();
    run.sweep = sweep(base, req, model, ctx);
  } else {
    const Applied a = apply(base, spec, ctx);
    run.base_plan = model.infer(base);
    run.perturbed_plan = model.infer(a.scene);
    run.perturbed_scene = a.scene;
    run.off_drivable = a.off_drivable();
  }
  return run;
}

json to_json(const PresetRun& r) {
  json j{{"preset", r.preset}, {"base_scene", scene_to_json(r.base_scene, RasterFormat::RunLength)}};
  if (r.sweep) j["sweep"] = to_json(*r.sweep);
  if (r.base_plan) j["base_plan"] = plan_to_json(*r.base_plan);
  if (r.perturbed_plan) j["perturbed_plan"] = plan_to_json(*r.perturbed_plan);
  if (r.perturbed_scene) j["perturbed_scene"] = scene_to_json(*r.perturbed_scene, RasterFormat::RunLength);
  if (!r.sweep) j["off_drivable"] = r.off_drivable;
  return j;
}

}  // namespace plancraft::perturb
