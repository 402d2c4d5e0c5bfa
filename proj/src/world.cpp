#include "plancraft/world.hpp"

#include <algorithm>
#include <cmath>

#include "plancraft/errors.hpp"

namespace plancraft::sim {

scene::OrientedBox EgoState::box() const {
  scene::OrientedBox b;
  b.center_x = x;
  b.center_y = y;
  b.yaw = normalize_angle(yaw);
  b.half_length = kEgoHalfLength;
  b.half_width = kEgoHalfWidth;
  b.speed = speed;
  return b;
}

scene::OrientedBox Actor::box() const {
  scene::OrientedBox b;
  b.center_x = pose.x;
  b.center_y = pose.y;
  b.yaw = normalize_angle(pose.yaw);
  b.half_length = half_length;
  b.half_width = half_width;
  b.speed = speed;
  b.cls = cls;
  return b;
}

EgoState step_ego(const EgoState& state, const control::ControlCommand& control, double dt) {
  if (!std::isfinite(control.steer) || !std::isfinite(control.accel)) {
    throw InvariantError("control", "non-finite control");
  }
  if (std::abs(control.steer) > control::kMaxSteer) throw InvariantError("control.steer", "exceeds 1.22 rad");
  if (!(dt > 0.0 && dt <= 0.1)) throw InvariantError("dt", "must lie in (0, 0.1]");
  EgoState next = state;
  next.x += state.speed * std::cos(state.yaw) * dt;
  next.y += state.speed * std::sin(state.yaw) * dt;
  if (control.steer != 0.0) next.yaw = normalize_angle(state.yaw + state.speed / state.wheelbase * std::tan(control.steer) * dt);
  next.speed = std::max(0.0, state.speed + control.accel * dt);
  return next;
}

std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::ConstructionObstacle: return "ConstructionObstacle";
    case ScenarioKind::ConstructionObstacleTwoWays: return "ConstructionObstacleTwoWays";
    case ScenarioKind::ParkedObstacle: return "ParkedObstacle";
    case ScenarioKind::Accident: return "Accident";
    case ScenarioKind::ParkingCutIn: return "ParkingCutIn";
    case ScenarioKind::PedestrianCrossing: return "PedestrianCrossing";
    case ScenarioKind::RedLight: return "RedLight";
    case ScenarioKind::StopSign: return "StopSign";
    case ScenarioKind::InvadingTurn: return "InvadingTurn";
  }
  return "?";
}

std::optional<ScenarioKind> scenario_kind_from_string(std::string_view s) {
  for (auto k : kAllScenarioKinds) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

Polyline::Projection World::ego_on_route() const { return layout->route.project(ego.position()); }

const Actor* World::find_actor(int id) const {
  for (const auto& a : actors) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

bool is_physical(const Actor& a) {
  return a.active && a.role != ActorRole::TrafficLightLine && a.role != ActorRole::StopSignLine;
}

namespace {

constexpr double kTrafficAccel = 2.5;
constexpr double kTrafficDecel = 6.0;
constexpr double kCutInMergeTime = 3.0;
constexpr double kStopSignReach = 3.0;

void place_on_path(Actor& a, const Polyline& path, double prev_lateral, double ds) {
  const Vec2 t = path.tangent_at(a.s);
  const Vec2 n{-t.y, t.x};
  const Vec2 p = path.point_at(a.s) + n * a.lateral;
  double yaw = std::atan2(t.y, t.x);
  if (ds > 1e-6) yaw += std::clamp(std::atan2(a.lateral - prev_lateral, ds), -0.5, 0.5);
  a.pose = {p.x, p.y, normalize_angle(yaw)};
}

// Highest speed that keeps `gap` above `gap_min` when braking at `decel`.
double gap_speed(double gap, double gap_min, double decel) {
  return std::sqrt(2.0 * decel * std::max(0.0, gap - gap_min));
}

double traffic_desired_speed(const World& w, const Actor& a) {
  const Polyline& path = w.layout->paths[static_cast<std::size_t>(a.path)];
  double desired = a.target_speed;
  for (const auto& o : w.actors) {
    if (!o.active || o.id == a.id || o.path != a.path) continue;
    if (o.role != ActorRole::Traffic && o.role != ActorRole::CutIn) continue;
    if (o.s <= a.s) continue;
    desired = std::min(desired, gap_speed(o.s - a.s - o.half_length - a.half_length, 4.0, 3.0));
  }
  if (a.yields) {
    const auto pe = path.project(w.ego.position());
    const double overlap = kEgoHalfWidth + a.half_width - std::abs(pe.lateral - a.lateral);
    const double ahead = pe.s - a.s;
    if (overlap > 0.2 && ahead > 0.0 && ahead < 40.0) {
      desired = std::min(desired, gap_speed(ahead - a.half_length - kEgoHalfLength, 3.0, 4.0));
    }
  }
  return desired;
}

void advance_traffic(World& w, Actor& a, double dt) {
  const Polyline& path = w.layout->paths[static_cast<std::size_t>(a.path)];
  const double desired = traffic_desired_speed(w, a);
  a.speed = std::max(0.0, a.speed + std::clamp(desired - a.speed, -kTrafficDecel * dt, kTrafficAccel * dt));
  const double ds = a.speed * dt;
  a.s += ds;
  place_on_path(a, path, a.lateral, ds);
  if (a.s > path.length() + 5.0) a.active = false;
}

void advance_cut_in(World& w, Actor& a, double dt) {
  if (!a.triggered) return;
  const Polyline& path = w.layout->paths[static_cast<std::size_t>(a.path)];
  const double t = w.time - a.trigger_time;
  const double prev_lateral = a.lateral;
  a.lateral = a.lateral_start * (1.0 - smoothstep(t / kCutInMergeTime));
  const double desired = std::min(a.target_speed, traffic_desired_speed(w, a));
  a.speed = std::max(0.0, a.speed + std::clamp(desired - a.speed, -kTrafficDecel * dt, kTrafficAccel * dt));
  const double ds = a.speed * dt;
  a.s += ds;
  place_on_path(a, path, prev_lateral, std::max(ds, 0.05));
  if (a.s > path.length() + 5.0) a.active = false;
}

void advance_pedestrian(World& w, Actor& a, double dt) {
  const Polyline& path = w.layout->paths[static_cast<std::size_t>(a.path)];
  if (a.role == ActorRole::CrossingPedestrian && !a.triggered) return;
  if (a.s >= path.length()) {
    a.speed = 0.0;
    if (a.role == ActorRole::Walker) a.active = false;
    return;
  }
  a.speed = a.target_speed;
  a.s = std::min(path.length(), a.s + a.speed * dt);
  place_on_path(a, path, a.lateral, 0.0);
}

bool waiting_at_red(const World& w, double ego_s) {
  for (const auto& a : w.actors) {
    if (!a.active || !a.visible || a.role != ActorRole::TrafficLightLine) continue;
    const double ahead = w.layout->route.project(a.pose.position()).s - ego_s;
    if (ahead > -1.0 && ahead < 15.0) return true;
  }
  return false;
}

}  // namespace

void spawn_actor(World& w, const Spawn& sp) {
  Actor a;
  a.id = w.next_actor_id++;
  a.cls = sp.cls;
  a.role = ActorRole::Traffic;
  a.half_length = sp.half_length;
  a.half_width = sp.half_width;
  a.path = sp.path;
  a.s = sp.s;
  a.lateral = sp.lateral;
  a.speed = sp.speed;
  a.target_speed = sp.speed;
  a.yields = sp.yields;
  a.scenario = sp.scenario;
  place_on_path(a, w.layout->paths[static_cast<std::size_t>(sp.path)], a.lateral, 0.0);
  w.actors.push_back(a);
}

void tick_scenario(World& w, double dt) {
  w.time += dt;
  const auto proj = w.ego_on_route();
  const double route_len = w.layout->route.length();
  if (std::abs(proj.lateral) <= 10.0) w.max_route_s = std::max(w.max_route_s, std::clamp(proj.s, 0.0, route_len));

  auto& sc = w.scenario;
  if (!sc.triggered) {
    const double dist = w.params.anchor_s - proj.s;
    bool fire = dist <= w.params.trigger_distance;
    if (w.kind == ScenarioKind::ParkingCutIn) {
      fire = fire && dist >= 0.0 && w.ego.speed > w.params.cutin_speed_threshold;
    }
    if (fire) {
      sc.triggered = true;
      sc.trigger_time = w.time;
      for (auto& a : w.actors) {
        if (a.role == ActorRole::CutIn || a.role == ActorRole::CrossingPedestrian) {
          a.triggered = true;
          a.trigger_time = w.time;
        }
      }
    }
  }
  if (sc.triggered && !sc.timed_out && w.time - sc.trigger_time >= w.params.timeout) {
    sc.timed_out = true;
    for (auto& a : w.actors) {
      if (a.scenario) a.active = false;
    }
  }

  if (w.kind == ScenarioKind::RedLight) sc.light_red = w.time < w.params.red_duration;

  while (sc.next_spawn < sc.schedule.size() && sc.schedule[sc.next_spawn].time <= w.time) {
    if (!sc.timed_out || !sc.schedule[sc.next_spawn].scenario) spawn_actor(w, sc.schedule[sc.next_spawn]);
    ++sc.next_spawn;
  }

  // Iterate by index: spawns above may have reallocated the vector.
  for (std::size_t i = 0; i < w.actors.size(); ++i) {
    Actor& a = w.actors[i];
    if (!a.active) continue;
    switch (a.role) {
      case ActorRole::Static: break;
      case ActorRole::Traffic: advance_traffic(w, a, dt); break;
      case ActorRole::CutIn: advance_cut_in(w, a, dt); break;
      case ActorRole::CrossingPedestrian:
      case ActorRole::Walker: advance_pedestrian(w, a, dt); break;
      case ActorRole::TrafficLightLine: a.visible = sc.light_red; break;
      case ActorRole::StopSignLine: {
        if (!a.visible) break;
        const double line_s = w.layout->route.project(a.pose.position()).s - a.half_length;
        const double gap = line_s - (proj.s + kEgoHalfLength);
        if (w.ego.speed < kStationarySpeed && gap >= -0.5 && gap <= kStopSignReach) {
          a.visible = false;
          sc.stop_satisfied = true;
        }
        break;
      }
    }
  }

  if (w.ego.speed < kStationarySpeed && !waiting_at_red(w, proj.s)) {
    w.stationary_time += dt;
  } else {
    w.stationary_time = 0.0;
  }
}

scene::RoutePoints route_points(const World& w) {
  const auto proj = w.ego_on_route();
  const auto pts = resample_chord(w.layout->route, proj.s, proj.point, scene::kRoutePoints, scene::kRouteSpacing);
  scene::RoutePoints out;
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) out.points[i] = point_to_ego_frame(pts[i], w.ego.pose());
  return out;
}

scene::Scene make_scene(const World& w, bool with_raster, std::vector<int>* actor_ids) {
  scene::Scene s;
  const Pose ego = w.ego.pose();
  if (actor_ids) actor_ids->clear();
  for (const auto& a : w.actors) {
    if (!a.active || !a.visible) continue;
    if (a.cls == scene::ObjectClass::Pedestrian && a.speed <= kStationarySpeed) continue;
    scene::OrientedBox b = a.box();
    const Pose local = to_ego_frame(a.pose, ego);
    b.center_x = local.x;
    b.center_y = local.y;
    b.yaw = local.yaw;
    if (!scene::in_range(b.center_x, b.center_y)) continue;
    s.objects.push_back(b);
    if (actor_ids) actor_ids->push_back(a.id);
  }
  s.route = route_points(w);
  s.speed_limit_index = w.speed_limit_index;
  if (with_raster) s.raster = scene::render_road_raster(w.layout->map, ego);
  s.ego_speed = w.ego.speed;
  return s;
}

}  // namespace plancraft::sim
