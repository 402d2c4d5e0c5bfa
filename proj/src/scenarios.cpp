#include "plancraft/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "plancraft/errors.hpp"
#include "plancraft/scene_json.hpp"

namespace plancraft::sim {

namespace {

constexpr double kExtension = 60.0;
constexpr double kSidewalkOffset = 4.5;
constexpr double kShoulderWidth = 2.5;

using scene::ObjectClass;

Polyline reference_line(const MapSpec& m) {
  std::vector<Vec2> pts;
  if (m.type == "curve") {
    const double r = m.curve_radius;
    const double angle = deg_to_rad(m.curve_angle_deg);
    pts.push_back({-kExtension, 0.0});
    pts.push_back({m.curve_start, 0.0});
    const int n = std::max(2, static_cast<int>(std::ceil(r * angle)));
    for (int i = 1; i <= n; ++i) {
      const double phi = -std::numbers::pi / 2 + angle * i / n;
      pts.push_back({m.curve_start + r * std::cos(phi), r + r * std::sin(phi)});
    }
    const double rest = std::max(10.0, m.length - m.curve_start - r * angle) + kExtension;
    const Vec2 end = pts.back();
    pts.push_back(end + Vec2{std::cos(angle), std::sin(angle)} * rest);
  } else {
    pts = {{-kExtension, 0.0}, {m.length + kExtension, 0.0}};
  }
  return Polyline(std::move(pts));
}

Polyline sub_polyline(const Polyline& line, double s0, double s1) {
  std::vector<Vec2> pts{line.point_at(s0)};
  for (std::size_t i = 0; i < line.size(); ++i) {
    const double s = line.arc_length_at(i);
    if (s > s0 + 1e-9 && s < s1 - 1e-9) pts.push_back(line.points()[i]);
  }
  pts.push_back(line.point_at(s1));
  return Polyline(std::move(pts));
}

void check_range(double v, double lo, double hi, const std::string& field) {
  if (!std::isfinite(v) || v < lo || v > hi) {
    throw SchemaError(field, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

struct Builder {
  World& w;
  Layout& layout;
  std::mt19937_64 rng;

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng); }

  Actor& add(ObjectClass cls, ActorRole role, const Pose& pose, double hl, double hw, bool scenario) {
    Actor a;
    a.id = w.next_actor_id++;
    a.cls = cls;
    a.role = role;
    a.pose = {pose.x, pose.y, normalize_angle(pose.yaw)};
    a.half_length = hl;
    a.half_width = hw;
    a.scenario = scenario;
    w.actors.push_back(a);
    return w.actors.back();
  }

  Actor& add_static(ObjectClass cls, double s, double d, double yaw_offset, double hl, double hw) {
    Pose p = route_pose(layout.route, s, d);
    p.yaw += yaw_offset;
    return add(cls, ActorRole::Static, p, hl, hw, true);
  }

  double path_s(int path, const Vec2& p) const {
    return layout.paths[static_cast<std::size_t>(path)].project(p).s;
  }

  // Converts virtual positions at t = 0 (negative = not yet on the road) into
  // spawns at the path start.
  void add_vehicle_at(double p, int path, double speed, double lateral, ObjectClass cls, bool yields,
                      bool scenario) {
    Spawn sp;
    sp.path = path;
    sp.speed = speed;
    sp.lateral = lateral;
    sp.cls = cls;
    sp.yields = yields;
    sp.scenario = scenario;
    if (p >= 0.0) {
      sp.time = 0.0;
      sp.s = p;
    } else {
      sp.time = -p / std::max(speed, 0.1);
      sp.s = 0.0;
    }
    w.scenario.schedule.push_back(sp);
  }

  // Regular stream on `path`; `gap_at` (path position at t = 0 of the last
  // vehicle before the gap) is ignored when gap == 0.
  void stream(int path, double speed, double spacing, double jitter, double gap, double gap_at, double lat_lo,
              double lat_hi, double horizon) {
    const double len = layout.paths[static_cast<std::size_t>(path)].length();
    const double tail = -speed * horizon;
    if (gap > 0.0) {
      for (double p = gap_at; p < len; p += spacing * uniform(1.0 - jitter, 1.0 + jitter)) {
        if (p > tail) add_vehicle_at(p, path, speed, uniform(lat_lo, lat_hi), ObjectClass::Vehicle, true, false);
      }
      for (double p = gap_at - gap; p > tail; p -= spacing * uniform(1.0 - jitter, 1.0 + jitter)) {
        add_vehicle_at(p, path, speed, uniform(lat_lo, lat_hi), ObjectClass::Vehicle, true, false);
      }
    } else {
      for (double p = len - uniform(0.0, spacing); p > tail; p -= spacing * uniform(1.0 - jitter, 1.0 + jitter)) {
        add_vehicle_at(p, path, speed, uniform(lat_lo, lat_hi), ObjectClass::Vehicle, true, false);
      }
    }
  }

  void walkers(int count) {
    for (int i = 0; i < count; ++i) {
      const int path = coin(0.5) ? kPathRightSidewalk : kPathLeftSidewalk;
      const auto& line = layout.paths[static_cast<std::size_t>(path)];
      Actor& a = add(ObjectClass::Pedestrian, ActorRole::Walker, {}, 0.3, 0.3, false);
      a.path = path;
      a.s = uniform(0.25, 0.8) * line.length();
      a.target_speed = uniform(1.1, 1.5);
      a.speed = a.target_speed;
      const Vec2 t = line.tangent_at(a.s);
      const Vec2 pos = line.point_at(a.s);
      a.pose = {pos.x, pos.y, std::atan2(t.y, t.x)};
    }
  }

  void oncoming_sparse(double horizon) {
    const auto& p = w.params;
    if (p.oncoming_rate <= 0.0) return;
    stream(kPathOncomingLane, p.oncoming_speed, p.oncoming_speed / p.oncoming_rate, 0.5, 0.0, 0.0, 0.0, 0.0,
           horizon);
  }

  // Cross traffic timed to pass the junction centre at `t_center`.
  void crossing_vehicle(int path, double t_center, double speed, ObjectClass cls, bool scenario) {
    const double s_center = path_s(path, layout.junction->center);
    add_vehicle_at(s_center - speed * t_center, path, speed, 0.0, cls, false, scenario);
  }
};

}  // namespace

Pose route_pose(const Polyline& route, double s, double d) {
  const Vec2 t = route.tangent_at(s);
  const Vec2 p = route.point_at(s) + Vec2{-t.y, t.x} * d;
  return {p.x, p.y, std::atan2(t.y, t.x)};
}

std::vector<Vec2> default_route(const MapSpec& map) {
  const Polyline ego_lane = offset_polyline(reference_line(map), -0.5 * kLaneWidth);
  const double s0 = ego_lane.project({0.0, -0.5 * kLaneWidth}).s;
  return sub_polyline(ego_lane, s0, s0 + map.length).points();
}

namespace {

Layout make_layout(const MapSpec& m, const std::vector<Vec2>& route) {
  Layout out;
  const Polyline ref = reference_line(m);
  const bool curve = m.type == "curve";

  Lane ego;
  ego.centerline = offset_polyline(ref, -0.5 * kLaneWidth);
  ego.width = kLaneWidth;
  ego.left_marking = curve ? Marking::Solid : Marking::Broken;
  ego.right_marking = Marking::Solid;
  ego.left_neighbor = 1;
  Lane oncoming;
  oncoming.centerline = reversed(offset_polyline(ref, 0.5 * kLaneWidth));
  oncoming.width = kLaneWidth;
  oncoming.right_marking = Marking::Solid;
  oncoming.left_neighbor = 0;
  out.map.lanes = {ego, oncoming};
  if (m.shoulder) {
    Lane shoulder;
    shoulder.centerline = offset_polyline(ref, -kLaneWidth - 0.5 * kShoulderWidth);
    shoulder.width = kShoulderWidth;
    out.map.lanes.push_back(shoulder);
  }

  const double right_walk = m.shoulder ? kLaneWidth + kShoulderWidth + 1.0 : kSidewalkOffset;
  out.paths = {ego.centerline, oncoming.centerline, offset_polyline(ref, -right_walk),
                   reversed(offset_polyline(ref, kSidewalkOffset))};
  out.route = Polyline(route);

  if (m.type == "junction") {
    const double xj = m.junction_s;
    const Polyline cross({{xj, -kExtension}, {xj, kExtension}});
    Lane north;
    north.centerline = offset_polyline(cross, -0.5 * kLaneWidth);
    north.left_marking = Marking::Broken;
    north.right_marking = Marking::Solid;
    Lane south;
    south.centerline = reversed(offset_polyline(cross, 0.5 * kLaneWidth));
    south.right_marking = Marking::Solid;
    const int base = static_cast<int>(out.map.lanes.size());
    north.left_neighbor = base + 1;
    south.left_neighbor = base;
    out.map.lanes.push_back(north);
    out.map.lanes.push_back(south);
    out.paths.push_back(north.centerline);
    out.paths.push_back(south.centerline);
    Junction j;
    j.center = {xj, 0.0};
    j.radius = 6.0;
    j.entry_s = out.route.project({xj - kLaneWidth, 0.0}).s;
    out.junction = j;
  } else if (m.type != "straight" && m.type != "curve") {
    throw SchemaError("map.type", "unknown map type '" + m.type + "'");
  }
  out.map.validate();
  return out;
}

}  // namespace

std::shared_ptr<const Layout> build_layout(const MapSpec& map, const std::vector<Vec2>& route) {
  return std::make_shared<const Layout>(make_layout(map, route));
}

ScenarioDef default_scenario(ScenarioKind kind) {
  ScenarioDef d;
  d.kind = kind;
  d.name = std::string(to_string(kind));
  auto& p = d.params;
  auto& m = d.map;
  switch (kind) {
    case ScenarioKind::ConstructionObstacle:
      p.anchor_s = 70.0;
      p.oncoming_rate = 0.03;
      p.oncoming_speed = 7.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::ConstructionObstacleTwoWays:
      p.anchor_s = 70.0;
      p.oncoming_rate = 0.22;
      p.oncoming_speed = 5.5;
      p.oncoming_gap = 200.0;
      p.timeout = 90.0;
      break;
    case ScenarioKind::ParkedObstacle:
      p.anchor_s = 70.0;
      p.oncoming_rate = 0.03;
      p.oncoming_speed = 7.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::Accident:
      p.anchor_s = 75.0;
      p.oncoming_rate = 0.03;
      p.oncoming_speed = 7.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::ParkingCutIn:
      p.anchor_s = 80.0;
      p.trigger_distance = 25.0;
      p.oncoming_rate = 0.03;
      p.oncoming_speed = 7.0;
      p.timeout = 40.0;
      m.shoulder = true;
      break;
    case ScenarioKind::PedestrianCrossing:
      p.anchor_s = 80.0;
      p.trigger_distance = 25.0;
      p.timeout = 40.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::RedLight:
      m.type = "junction";
      m.junction_s = 95.0;
      p.anchor_s = 90.0;
      p.red_duration = 20.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::StopSign:
      m.type = "junction";
      m.junction_s = 95.0;
      p.anchor_s = 90.0;
      p.timeout = 40.0;
      p.speed_limit_index = -1;
      break;
    case ScenarioKind::InvadingTurn:
      m.type = "curve";
      m.curve_start = 50.0;
      m.curve_radius = 35.0;
      m.curve_angle_deg = 90.0;
      p.anchor_s = 50.0;
      p.oncoming_rate = 0.09;
      p.oncoming_speed = 6.0;
      p.trigger_distance = 40.0;
      break;
  }
  d.route = default_route(m);
  return d;
}

World build_world(const ScenarioDef& def, std::uint64_t seed) {
  Layout layout = make_layout(def.map, def.route);
  World w;
  w.kind = def.kind;
  w.params = def.params;
  w.seed = seed;
  Builder b{w, layout, std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(def.kind) + 1)};

  const Polyline& route = layout.route;
  const Pose start = route_pose(route, 0.0, 0.0);
  w.ego.x = start.x;
  w.ego.y = start.y;
  w.ego.yaw = start.yaw;
  w.speed_limit_index = def.params.speed_limit_index < 0 ? (b.coin(0.5) ? 1 : 0) : def.params.speed_limit_index;

  auto& p = w.params;
  constexpr double kHorizon = 150.0;
  switch (def.kind) {
    case ScenarioKind::ConstructionObstacle:
    case ScenarioKind::ConstructionObstacleTwoWays: {
      p.anchor_s += b.uniform(-8.0, 8.0);
      const double dc = p.obstacle_lane == 0 ? 0.0 : kLaneWidth;
      b.add_static(ObjectClass::StaticObstacle, p.anchor_s, dc, 0.0, 0.3, 0.6);
      for (int k = 1; k <= 5; ++k) {
        for (double side : {-1.2, 1.2}) {
          b.add_static(ObjectClass::StaticObstacle, p.anchor_s + 2.5 * k, dc + side + b.uniform(-0.1, 0.1), 0.0,
                       0.2, 0.2);
        }
      }
      if (def.kind == ScenarioKind::ConstructionObstacleTwoWays) {
        const double wait_s = p.anchor_s - 15.0;
        const double s_w = b.path_s(kPathOncomingLane, route.point_at(wait_s));
        const double t_free = b.uniform(12.0, 30.0);
        const double spacing = p.oncoming_speed / std::max(p.oncoming_rate, 1e-3);
        b.stream(kPathOncomingLane, p.oncoming_speed, spacing, 0.1, p.oncoming_gap,
                 s_w - p.oncoming_speed * t_free, 0.0, 0.0, kHorizon);
      } else {
        b.oncoming_sparse(kHorizon);
        b.walkers(2 + static_cast<int>(b.rng() % 3));
      }
      break;
    }
    case ScenarioKind::ParkedObstacle: {
      p.anchor_s += b.uniform(-8.0, 8.0);
      b.add_static(ObjectClass::Vehicle, p.anchor_s, -1.0 + b.uniform(-0.2, 0.2), b.uniform(-0.1, 0.1), 2.3, 0.95);
      b.oncoming_sparse(kHorizon);
      b.walkers(2 + static_cast<int>(b.rng() % 3));
      break;
    }
    case ScenarioKind::Accident: {
      p.anchor_s += b.uniform(-8.0, 8.0);
      b.add_static(ObjectClass::EmergencyVehicle, p.anchor_s - 10.0, -0.5, b.uniform(-0.05, 0.05), 2.45, 1.0);
      b.add_static(ObjectClass::Vehicle, p.anchor_s, -0.3, 0.3 + b.uniform(-0.05, 0.05), 2.3, 0.95);
      b.add_static(ObjectClass::Vehicle, p.anchor_s + 6.0, 0.1, -0.3 + b.uniform(-0.05, 0.05), 2.3, 0.95);
      b.oncoming_sparse(kHorizon);
      b.walkers(1 + static_cast<int>(b.rng() % 2));
      break;
    }
    case ScenarioKind::ParkingCutIn: {
      p.anchor_s += b.uniform(-8.0, 8.0);
      const double d_park = -0.5 * kLaneWidth - 0.5 * kShoulderWidth;
      for (double offset : {-30.0, -18.0, 12.0}) {
        b.add_static(ObjectClass::Vehicle, p.anchor_s + offset + b.uniform(-1.0, 1.0), d_park, 0.0, 2.3, 0.95);
      }
      Actor& car = b.add(ObjectClass::Vehicle, ActorRole::CutIn, route_pose(route, p.anchor_s, d_park), 2.3, 0.95,
                         true);
      car.path = kPathEgoLane;
      car.s = b.path_s(kPathEgoLane, route.point_at(p.anchor_s));
      car.lateral = d_park;
      car.lateral_start = d_park;
      car.target_speed = 7.0;
      b.oncoming_sparse(kHorizon);
      break;
    }
    case ScenarioKind::PedestrianCrossing: {
      p.anchor_s += b.uniform(-8.0, 8.0);
      p.trigger_distance += b.uniform(-3.0, 5.0);
      const Pose from = route_pose(route, p.anchor_s, -0.5 * kLaneWidth - 1.0);
      const Pose to = route_pose(route, p.anchor_s, 1.5 * kLaneWidth + 2.75);
      layout.paths.push_back(Polyline({from.position(), to.position()}));
      Actor& ped = b.add(ObjectClass::Pedestrian, ActorRole::CrossingPedestrian, from, 0.3, 0.3, true);
      ped.path = static_cast<int>(layout.paths.size()) - 1;
      ped.pose.yaw = std::atan2(to.y - from.y, to.x - from.x);
      ped.target_speed = 1.4;
      b.walkers(2 + static_cast<int>(b.rng() % 3));
      break;
    }
    case ScenarioKind::RedLight: {
      if (!layout.junction) throw SchemaError("map.type", "RedLight needs a junction map");
      p.anchor_s = layout.junction->entry_s - 1.0;
      p.red_duration *= b.uniform(0.6, 1.3);
      w.scenario.light_red = p.red_duration > 0.0;
      Actor& line = b.add(ObjectClass::TrafficLightStopLine, ActorRole::TrafficLightLine,
                          route_pose(route, p.anchor_s, 0.0), 0.25, 0.5 * kLaneWidth, false);
      line.visible = w.scenario.light_red;
      const int north = kPathLeftSidewalk + 1;
      int dir = 0;
      for (double t = 3.0 + b.uniform(0.0, 2.0); t < p.red_duration - 4.0; t += b.uniform(4.0, 7.0)) {
        b.crossing_vehicle(north + (dir++ % 2), t, 8.0, ObjectClass::Vehicle, false);
      }
      if (p.emergency_vehicle && b.coin(0.6)) {
        b.crossing_vehicle(north + static_cast<int>(b.rng() % 2), p.red_duration + b.uniform(1.0, 3.0), 10.0,
                           ObjectClass::EmergencyVehicle, true);
      }
      b.walkers(2 + static_cast<int>(b.rng() % 3));
      break;
    }
    case ScenarioKind::StopSign: {
      if (!layout.junction) throw SchemaError("map.type", "StopSign needs a junction map");
      p.anchor_s = layout.junction->entry_s - 1.0;
      b.add(ObjectClass::StopSignStopLine, ActorRole::StopSignLine, route_pose(route, p.anchor_s, 0.0), 0.25,
            0.5 * kLaneWidth, false);
      b.walkers(2 + static_cast<int>(b.rng() % 3));
      break;
    }
    case ScenarioKind::InvadingTurn: {
      const double spacing = p.oncoming_speed / std::max(p.oncoming_rate, 1e-3);
      b.stream(kPathOncomingLane, p.oncoming_speed, spacing, 0.3, 0.0, 0.0, 1.2, 1.6, kHorizon);
      break;
    }
  }

  auto& schedule = w.scenario.schedule;
  std::stable_sort(schedule.begin(), schedule.end(), [](const Spawn& a, const Spawn& b2) { return a.time < b2.time; });
  w.layout = std::make_shared<const Layout>(std::move(layout));
  // Vehicles already on the road at t = 0.
  while (w.scenario.next_spawn < schedule.size() && schedule[w.scenario.next_spawn].time <= 0.0) {
    spawn_actor(w, schedule[w.scenario.next_spawn++]);
  }
  return w;
}

nlohmann::json to_json(const ScenarioDef& d) {
  const auto& p = d.params;
  const auto& m = d.map;
  return {{"name", d.name},
          {"kind", std::string(to_string(d.kind))},
          {"params",
           {{"anchor_s", p.anchor_s},
            {"trigger_distance", p.trigger_distance},
            {"obstacle_lane", p.obstacle_lane},
            {"oncoming_rate", p.oncoming_rate},
            {"oncoming_speed", p.oncoming_speed},
            {"oncoming_gap", p.oncoming_gap},
            {"cutin_speed_threshold", p.cutin_speed_threshold},
            {"timeout", p.timeout},
            {"speed_limit_index", p.speed_limit_index},
            {"red_duration", p.red_duration},
            {"emergency_vehicle", p.emergency_vehicle}}},
          {"map",
           {{"type", m.type},
            {"length", m.length},
            {"curve_start", m.curve_start},
            {"curve_radius", m.curve_radius},
            {"curve_angle_deg", m.curve_angle_deg},
            {"junction_s", m.junction_s},
            {"shoulder", m.shoulder}}},
          {"route", points_to_json(d.route)}};
}

namespace {

double get_number(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number()) throw SchemaError(field, "expected number");
  return j.get<double>();
}

}  // namespace

ScenarioDef scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("$", "expected object");
  ScenarioDef d;
  for (const auto& [key, value] : j.items()) {
    if (key != "name" && key != "kind" && key != "params" && key != "map" && key != "route") {
      throw SchemaError(key, "unknown key");
    }
  }
  if (!j.contains("kind") || !j["kind"].is_string()) throw SchemaError("kind", "expected template name");
  const auto kind = scenario_kind_from_string(j["kind"].get<std::string>());
  if (!kind) throw SchemaError("kind", "unknown template '" + j["kind"].get<std::string>() + "'");
  d = default_scenario(*kind);
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw SchemaError("name", "expected string");
    d.name = j["name"].get<std::string>();
  }
  if (j.contains("params")) {
    const auto& pj = j["params"];
    if (!pj.is_object()) throw SchemaError("params", "expected object");
    auto& p = d.params;
    for (const auto& [key, value] : pj.items()) {
      const std::string f = "params." + key;
      if (key == "anchor_s") p.anchor_s = get_number(value, f);
      else if (key == "trigger_distance") p.trigger_distance = get_number(value, f);
      else if (key == "obstacle_lane") p.obstacle_lane = static_cast<int>(get_number(value, f));
      else if (key == "oncoming_rate") p.oncoming_rate = get_number(value, f);
      else if (key == "oncoming_speed") p.oncoming_speed = get_number(value, f);
      else if (key == "oncoming_gap") p.oncoming_gap = get_number(value, f);
      else if (key == "cutin_speed_threshold") p.cutin_speed_threshold = get_number(value, f);
      else if (key == "timeout") p.timeout = get_number(value, f);
      else if (key == "speed_limit_index") p.speed_limit_index = static_cast<int>(get_number(value, f));
      else if (key == "red_duration") p.red_duration = get_number(value, f);
      else if (key == "emergency_vehicle") {
        if (!value.is_boolean()) throw SchemaError(f, "expected boolean");
        p.emergency_vehicle = value.get<bool>();
      } else {
        throw SchemaError(f, "unknown key");
      }
    }
  }
  if (j.contains("map")) {
    const auto& mj = j["map"];
    if (!mj.is_object()) throw SchemaError("map", "expected object");
    auto& m = d.map;
    for (const auto& [key, value] : mj.items()) {
      const std::string f = "map." + key;
      if (key == "type") {
        if (!value.is_string()) throw SchemaError(f, "expected string");
        m.type = value.get<std::string>();
      } else if (key == "length") m.length = get_number(value, f);
      else if (key == "curve_start") m.curve_start = get_number(value, f);
      else if (key == "curve_radius") m.curve_radius = get_number(value, f);
      else if (key == "curve_angle_deg") m.curve_angle_deg = get_number(value, f);
      else if (key == "junction_s") m.junction_s = get_number(value, f);
      else if (key == "shoulder") {
        if (!value.is_boolean()) throw SchemaError(f, "expected boolean");
        m.shoulder = value.get<bool>();
      } else {
        throw SchemaError(f, "unknown key");
      }
    }
  }
  d.route = j.contains("route") ? points_from_json(j["route"], "route") : default_route(d.map);
  if (d.route.size() < 2) throw SchemaError("route", "needs at least 2 points");

  const auto& p = d.params;
  const double route_len = Polyline(d.route).length();
  check_range(p.anchor_s, 0.0, std::max(0.0, route_len), "params.anchor_s");
  check_range(p.trigger_distance, 1.0, 100.0, "params.trigger_distance");
  check_range(p.obstacle_lane, 0, 1, "params.obstacle_lane");
  check_range(p.oncoming_rate, 0.0, 1.0, "params.oncoming_rate");
  check_range(p.oncoming_speed, 0.0, 20.0, "params.oncoming_speed");
  check_range(p.oncoming_gap, 0.0, 2000.0, "params.oncoming_gap");
  check_range(p.cutin_speed_threshold, 0.0, 20.0, "params.cutin_speed_threshold");
  check_range(p.timeout, 1.0, 1000.0, "params.timeout");
  check_range(p.speed_limit_index, -1, 3, "params.speed_limit_index");
  check_range(p.red_duration, 0.0, 120.0, "params.red_duration");
  const auto& m = d.map;
  check_range(m.length, 10.0, 2000.0, "map.length");
  check_range(m.curve_radius, 10.0, 1000.0, "map.curve_radius");
  check_range(m.curve_angle_deg, 0.0, 180.0, "map.curve_angle_deg");
  return d;
}

ScenarioDef load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path, "cannot open scenario file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path, e.what());
  }
  return scenario_from_json(j);
}

std::vector<ScenarioDef> load_scenario_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ScenarioDef> out;
  for (const auto& f : files) out.push_back(load_scenario(f.string()));
  return out;
}

}  // namespace plancraft::sim
