#include "plancraft/episode.hpp"

#include <cmath>
#include <fstream>

#include "plancraft/errors.hpp"
#include "plancraft/scene_json.hpp"

namespace plancraft::sim {

std::string_view to_string(InfractionKind k) {
  switch (k) {
    case InfractionKind::CollisionPedestrian: return "CollisionPedestrian";
    case InfractionKind::CollisionVehicle: return "CollisionVehicle";
    case InfractionKind::CollisionStatic: return "CollisionStatic";
    case InfractionKind::RedLight: return "RedLight";
    case InfractionKind::StopSign: return "StopSign";
    case InfractionKind::ScenarioTimeout: return "ScenarioTimeout";
    case InfractionKind::RouteDeviation: return "RouteDeviation";
    case InfractionKind::Blocked: return "Blocked";
  }
  return "?";
}

std::optional<InfractionKind> infraction_kind_from_string(std::string_view s) {
  for (auto k : kAllInfractionKinds) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

namespace {

InfractionKind collision_kind(const Actor& a) {
  if (a.cls == scene::ObjectClass::Pedestrian) return InfractionKind::CollisionPedestrian;
  if (a.role == ActorRole::Static) return InfractionKind::CollisionStatic;
  return InfractionKind::CollisionVehicle;
}

double ego_front_s(const World& w) { return w.ego_on_route().s + kEgoHalfLength; }

}  // namespace

std::vector<InfractionEvent> detect_infractions(const World& prev, const World& next, int* suppressed) {
  std::vector<InfractionEvent> events;
  const Vec2 pos = next.ego.position();
  const auto ego_prev = prev.ego.box();
  const auto ego_next = next.ego.box();
  const bool stationary = std::max(prev.ego.speed, next.ego.speed) < kStationarySpeed;

  for (std::size_t i = 0; i < next.actors.size(); ++i) {
    const Actor& a = next.actors[i];
    if (!is_physical(a) || !scene::box_overlap(ego_next, a.box())) continue;
    if (i < prev.actors.size() && is_physical(prev.actors[i]) && scene::box_overlap(ego_prev, prev.actors[i].box())) continue;
    const InfractionKind kind = collision_kind(a);
    if (kind == InfractionKind::CollisionVehicle && stationary) {
      if (suppressed) ++*suppressed;
      continue;
    }
    events.push_back({kind, next.time, pos, a.id});
  }

  const double front_prev = ego_front_s(prev);
  const double front_next = ego_front_s(next);
  for (std::size_t i = 0; i < prev.actors.size() && i < next.actors.size(); ++i) {
    const Actor& a = prev.actors[i];
    if (!a.active || !a.visible) continue;
    if (a.role != ActorRole::TrafficLightLine && a.role != ActorRole::StopSignLine) continue;
    const auto line = prev.layout->route.project(a.pose.position());
    if (std::abs(line.lateral) > 3.0) continue;
    if (front_prev < line.s && front_next >= line.s) {
      events.push_back({a.role == ActorRole::TrafficLightLine ? InfractionKind::RedLight : InfractionKind::StopSign,
                        next.time, pos, a.id});
    }
  }

  if (!prev.scenario.timed_out && next.scenario.timed_out) {
    events.push_back({InfractionKind::ScenarioTimeout, next.time, pos, -1});
  }
  if (std::abs(prev.ego_on_route().lateral) <= kRouteDeviation && std::abs(next.ego_on_route().lateral) > kRouteDeviation) {
    events.push_back({InfractionKind::RouteDeviation, next.time, pos, -1});
  }
  if (prev.stationary_time < kBlockedTime && next.stationary_time >= kBlockedTime) {
    events.push_back({InfractionKind::Blocked, next.time, pos, -1});
  }
  return events;
}

EpisodeLog run_episode(World world, const PlannerFn& planner, const EpisodeConfig& config) {
  if (!(config.sim_dt > 0.0 && config.sim_dt <= 0.1)) throw ConfigError("episode.sim_dt: must lie in (0, 0.1]");
  if (config.planner_every < 1) throw ConfigError("episode.planner_every: must be >= 1");
  if (!(config.time_limit > 0.0)) throw ConfigError("episode.time_limit: must be positive");

  EpisodeLog log;
  log.kind = world.kind;
  log.seed = world.seed;
  log.route_length = world.layout->route.length();
  if (log.route_length <= 1e-9) {
    log.termination = "route_end";
    return log;
  }

  control::PlanFollower follower(config.controller);
  control::ControlCommand command;
  const auto max_steps = static_cast<long>(std::ceil(config.time_limit / config.sim_dt - 1e-9));
  for (long k = 0; k < max_steps; ++k) {
    StepRecord rec;
    if (k % config.planner_every == 0) {
      scene::Scene scene = make_scene(world);
      try {
        PlanOutput plan = planner(world, scene);
        command = follower.command(plan, world.ego.speed);
        rec.plan = std::move(plan);
      } catch (const std::exception& e) {
        log.planner_failure = e.what();
        log.termination = "planner_failure";
        break;
      }
      if (config.record_scenes) {
        scene.raster = {};
        rec.scene = std::move(scene);
      }
    }
    World next = world;
    next.ego = step_ego(world.ego, command, config.sim_dt);
    tick_scenario(next, config.sim_dt);
    auto events = detect_infractions(world, next, &log.suppressed_collisions);

    rec.time = next.time;
    rec.ego = next.ego;
    rec.control = command;
    rec.scenario_active = next.scenario.triggered && !next.scenario.timed_out;
    log.steps.push_back(std::move(rec));
    log.infractions.insert(log.infractions.end(), events.begin(), events.end());
    world = std::move(next);

    bool stop = false;
    for (const auto& e : events) {
      if (e.kind == InfractionKind::Blocked) {
        log.termination = "blocked";
        stop = true;
      } else if (e.kind == InfractionKind::RouteDeviation) {
        log.termination = "route_deviation";
        stop = true;
      }
    }
    if (!stop && world.ego_on_route().s >= log.route_length) {
      log.termination = "route_end";
      stop = true;
    }
    if (stop) break;
  }
  if (log.termination.empty()) log.termination = "time_limit";
  log.duration = world.time;
  log.distance_completed = log.termination == "route_end" ? log.route_length : std::min(world.max_route_s, log.route_length);
  return log;
}

nlohmann::json infraction_to_json(const InfractionEvent& e) {
  return {{"kind", to_string(e.kind)}, {"time", e.time}, {"x", e.position.x}, {"y", e.position.y}, {"actor", e.actor_id}};
}

InfractionEvent infraction_from_json(const nlohmann::json& j) {
  try {
    const auto kind = infraction_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw SchemaError("infraction.kind", "unknown kind");
    return {*kind, j.at("time").get<double>(), {j.at("x").get<double>(), j.at("y").get<double>()}, j.value("actor", -1)};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("infraction", e.what());
  }
}

namespace {

json step_to_json(const StepRecord& r) {
  json j = {{"type", "step"},
            {"t", r.time},
            {"ego", {{"x", r.ego.x}, {"y", r.ego.y}, {"yaw", r.ego.yaw}, {"speed", r.ego.speed}}},
            {"control", {{"steer", r.control.steer}, {"accel", r.control.accel}}},
            {"scenario_active", r.scenario_active}};
  if (r.scene) j["scene"] = scene_to_json(*r.scene, RasterFormat::Omit);
  if (r.plan) j["plan"] = plan_to_json(*r.plan);
  return j;
}

StepRecord step_from_json(const json& j) {
  StepRecord r;
  r.time = j.at("t").get<double>();
  const auto& e = j.at("ego");
  r.ego.x = e.at("x").get<double>();
  r.ego.y = e.at("y").get<double>();
  r.ego.yaw = e.at("yaw").get<double>();
  r.ego.speed = e.at("speed").get<double>();
  r.control.steer = j.at("control").at("steer").get<double>();
  r.control.accel = j.at("control").at("accel").get<double>();
  r.scenario_active = j.at("scenario_active").get<bool>();
  if (j.contains("scene")) r.scene = scene_from_json(j["scene"]);
  if (j.contains("plan")) r.plan = plan_from_json(j["plan"]);
  return r;
}

}  // namespace

void write_episode_log(const std::string& path, const EpisodeLog& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& r : log.steps) out << step_to_json(r).dump() << '\n';
  json summary = {{"type", "summary"},
                  {"scenario", log.scenario},
                  {"kind", to_string(log.kind)},
                  {"seed", log.seed},
                  {"route_length", log.route_length},
                  {"distance_completed", log.distance_completed},
                  {"duration", log.duration},
                  {"termination", log.termination},
                  {"planner_failure", log.planner_failure},
                  {"suppressed_collisions", log.suppressed_collisions},
                  {"infractions", json::array()}};
  for (const auto& e : log.infractions) summary["infractions"].push_back(infraction_to_json(e));
  out << summary.dump() << '\n';
}

EpisodeLog read_episode_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  EpisodeLog log;
  std::string line;
  bool have_summary = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (have_summary) throw SchemaError("line " + std::to_string(lineno), "record after summary");
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError("line " + std::to_string(lineno), e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "step") {
        StepRecord r = step_from_json(j);
        if (!log.steps.empty() && r.time <= log.steps.back().time) {
          throw InvariantError("line " + std::to_string(lineno), "timestamps must increase");
        }
        log.steps.push_back(std::move(r));
      } else if (type == "summary") {
        log.scenario = j.at("scenario").get<std::string>();
        const auto kind = scenario_kind_from_string(j.at("kind").get<std::string>());
        if (!kind) throw SchemaError("summary.kind", "unknown scenario kind");
        log.kind = *kind;
        log.seed = j.at("seed").get<std::uint64_t>();
        log.route_length = j.at("route_length").get<double>();
        log.distance_completed = j.at("distance_completed").get<double>();
        log.duration = j.at("duration").get<double>();
        log.termination = j.at("termination").get<std::string>();
        log.planner_failure = j.at("planner_failure").get<std::string>();
        log.suppressed_collisions = j.value("suppressed_collisions", 0);
        for (const auto& e : j.at("infractions")) log.infractions.push_back(infraction_from_json(e));
        have_summary = true;
      } else {
        throw SchemaError("line " + std::to_string(lineno) + ".type", "unknown record type");
      }
    } catch (const json::exception& e) {
      throw SchemaError("line " + std::to_string(lineno), e.what());
    }
  }
  if (!have_summary) throw SchemaError("summary", "missing trailing summary record");
  if (log.distance_completed > log.route_length + 1e-9) {
    throw InvariantError("summary.distance_completed", "exceeds route length");
  }
  return log;
}

}  // namespace plancraft::sim
