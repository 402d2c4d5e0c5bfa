#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "plancraft/episode.hpp"
#include "plancraft/errors.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/scenarios.hpp"
#include "plancraft/scene_json.hpp"

using namespace plancraft;
using namespace plancraft::sim;

namespace {

void place_ego(World& w, double s, double speed) {
  const Pose p = route_pose(w.layout->route, s, 0.0);
  w.ego.x = p.x;
  w.ego.y = p.y;
  w.ego.yaw = p.yaw;
  w.ego.speed = speed;
}

const Actor* find_role(const World& w, ActorRole role) {
  for (const auto& a : w.actors) {
    if (a.role == role) return &a;
  }
  return nullptr;
}

Actor vehicle_at(const Pose& pose, double speed = 0.0) {
  Actor a;
  a.id = 1000;
  a.role = ActorRole::Traffic;
  a.pose = pose;
  a.half_length = 2.4;
  a.half_width = 0.95;
  a.speed = speed;
  return a;
}

PlanOutput expert_planner(const World& w, const scene::Scene&) {
  return expert::to_plan_output(expert::expert_plan(w));
}

}  // namespace

TEST_CASE("step_ego kinematic examples") {
  EgoState s;
  s.speed = 10.0;
  auto n = step_ego(s, {0.0, 0.0}, 0.05);
  CHECK(n.x == 0.5);
  CHECK(n.yaw == 0.0);

  EgoState rest;
  CHECK(step_ego(rest, {0.0, -1.0}, 0.05).speed == 0.0);

  n = step_ego(s, {0.1, 0.0}, 0.05);
  const double oracle = (10.0 / 2.9) * std::tan(0.1) * 0.05;
  CHECK(n.yaw == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(n.yaw == doctest::Approx(0.01731).epsilon(1e-3));

  CHECK_THROWS_AS(step_ego(s, {NAN, 0.0}, 0.05), InvariantError);
  CHECK_THROWS_AS(step_ego(s, {0.0, INFINITY}, 0.05), InvariantError);
  CHECK_THROWS_AS(step_ego(s, {1.3, 0.0}, 0.05), InvariantError);
  CHECK_THROWS_AS(step_ego(s, {0.0, 0.0}, 0.0), InvariantError);
  CHECK_THROWS_AS(step_ego(s, {0.0, 0.0}, 0.2), InvariantError);
}

TEST_CASE("step_ego keeps speed non-negative and heading fixed without steering") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    EgoState s;
    s.x = 100.0 * u(rng);
    s.y = 100.0 * u(rng);
    s.yaw = 3.0 * u(rng);
    s.speed = 15.0 * (u(rng) + 1.0);
    const auto straight = step_ego(s, {0.0, 6.0 * u(rng)}, 0.1);
    CHECK(straight.yaw == s.yaw);
    CHECK(straight.speed >= 0.0);
    CHECK(step_ego(s, {1.2 * u(rng), -6.0}, 0.1).speed >= 0.0);
  }
}

TEST_CASE("ParkingCutIn triggers on distance and ego speed") {
  const auto def = default_scenario(ScenarioKind::ParkingCutIn);
  struct Case {
    double distance, speed;
    bool fires;
  };
  for (const Case c : {Case{40.0, 8.0, false}, Case{20.0, 8.0, true}, Case{20.0, 2.0, false}}) {
    World w = build_world(def, 3);
    REQUIRE(w.params.trigger_distance == doctest::Approx(25.0));
    REQUIRE(w.params.cutin_speed_threshold == doctest::Approx(5.0));
    place_ego(w, w.params.anchor_s - c.distance, c.speed);
    tick_scenario(w, 0.05);
    CHECK(w.scenario.triggered == c.fires);
    const Actor* car = find_role(w, ActorRole::CutIn);
    REQUIRE(car);
    CHECK(car->triggered == c.fires);
    if (c.fires) {
      const double lat0 = car->lateral;
      for (int i = 0; i < 20; ++i) tick_scenario(w, 0.05);
      CHECK(find_role(w, ActorRole::CutIn)->lateral > lat0);
    }
  }
}

TEST_CASE("static obstacles never move") {
  for (auto kind : {ScenarioKind::ConstructionObstacle, ScenarioKind::Accident}) {
    World w = build_world(default_scenario(kind), 1);
    std::vector<Pose> before;
    for (const auto& a : w.actors) {
      if (a.role == ActorRole::Static) before.push_back(a.pose);
    }
    REQUIRE_FALSE(before.empty());
    for (int i = 0; i < 400; ++i) {
      w.ego.x += 0.4;
      tick_scenario(w, 0.05);
    }
    std::size_t k = 0;
    for (const auto& a : w.actors) {
      if (a.role == ActorRole::Static) CHECK(a.pose == before[k++]);
    }
  }
}

TEST_CASE("scene extraction hides stationary pedestrians and green lights") {
  World w = build_world(default_scenario(ScenarioKind::RedLight), 0);
  auto has_class = [](const scene::Scene& s, scene::ObjectClass c) {
    for (const auto& b : s.objects) {
      if (b.cls == c) return true;
    }
    return false;
  };
  place_ego(w, w.params.anchor_s - 20.0, 0.0);
  CHECK(has_class(make_scene(w), scene::ObjectClass::TrafficLightStopLine));
  while (w.scenario.light_red) tick_scenario(w, 0.05);
  CHECK_FALSE(has_class(make_scene(w), scene::ObjectClass::TrafficLightStopLine));

  World p = build_world(default_scenario(ScenarioKind::PedestrianCrossing), 0);
  place_ego(p, p.params.anchor_s - 40.0, 0.0);
  const Actor* ped = find_role(p, ActorRole::CrossingPedestrian);
  REQUIRE(ped);
  CHECK(ped->speed == 0.0);
  const auto scene = make_scene(p);
  for (const auto& b : scene.objects) {
    if (b.cls == scene::ObjectClass::Pedestrian) CHECK(b.speed > kStationarySpeed);
  }
}

TEST_CASE("detect_infractions examples") {
  World base = build_world(default_scenario(ScenarioKind::RedLight), 0);
  base.actors.clear();
  place_ego(base, 30.0, 5.0);

  SUBCASE("pedestrian contact while moving") {
    World next = base;
    Actor ped = vehicle_at(next.ego.pose());
    ped.cls = scene::ObjectClass::Pedestrian;
    ped.role = ActorRole::Walker;
    ped.half_length = ped.half_width = 0.3;
    next.actors.push_back(ped);
    const auto ev = detect_infractions(base, next);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].kind == InfractionKind::CollisionPedestrian);

    // Continuing contact does not re-trigger.
    CHECK(detect_infractions(next, next).empty());
  }

  SUBCASE("stationary ego hit by a vehicle is not penalised") {
    World prev = base;
    prev.ego.speed = 0.0;
    prev.actors.push_back(vehicle_at(route_pose(prev.layout->route, 42.0, 0.0), 5.0));
    World next = prev;
    next.actors[0].pose = route_pose(prev.layout->route, 34.0, 0.0);
    int suppressed = 0;
    CHECK(detect_infractions(prev, next, &suppressed).empty());
    CHECK(suppressed == 1);

    prev.ego.speed = next.ego.speed = 3.0;
    const auto ev = detect_infractions(prev, next);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].kind == InfractionKind::CollisionVehicle);
  }

  SUBCASE("static collision") {
    World next = base;
    Actor cone = vehicle_at(next.ego.pose());
    cone.role = ActorRole::Static;
    cone.cls = scene::ObjectClass::StaticObstacle;
    next.actors.push_back(cone);
    const auto ev = detect_infractions(base, next);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].kind == InfractionKind::CollisionStatic);
  }

  SUBCASE("crossing a red stop line") {
    World red = build_world(default_scenario(ScenarioKind::RedLight), 0);
    const Actor* line = find_role(red, ActorRole::TrafficLightLine);
    REQUIRE(line);
    REQUIRE(line->visible);
    const double line_s = red.layout->route.project(line->pose.position()).s;
    place_ego(red, line_s - kEgoHalfLength - 0.1, 3.0);
    World next = red;
    place_ego(next, line_s - kEgoHalfLength + 0.05, 3.0);
    const auto ev = detect_infractions(red, next);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].kind == InfractionKind::RedLight);

    red.actors[static_cast<std::size_t>(line - red.actors.data())].visible = false;
    CHECK(detect_infractions(red, next).empty());
  }

  SUBCASE("blocked and timeout transitions") {
    World prev = base;
    World next = base;
    prev.stationary_time = kBlockedTime - 0.01;
    next.stationary_time = kBlockedTime + 0.04;
    next.scenario.timed_out = true;
    const auto ev = detect_infractions(prev, next);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].kind == InfractionKind::ScenarioTimeout);
    CHECK(ev[1].kind == InfractionKind::Blocked);
  }
}

TEST_CASE("expert completes RedLight without infractions") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto log = run_episode(build_world(default_scenario(ScenarioKind::RedLight), seed), expert_planner);
    CHECK(log.termination == "route_end");
    CHECK(log.infractions.empty());
    CHECK(log.distance_completed == doctest::Approx(log.route_length));
  }
}

TEST_CASE("straight max-speed planner hits the construction site") {
  PlannerFn blind = [](const World&, const scene::Scene&) {
    PlanOutput p;
    std::vector<Vec2> path, wps;
    for (int i = 1; i <= 20; ++i) path.push_back({static_cast<double>(i), 0.0});
    for (int i = 1; i <= 8; ++i) wps.push_back({3.5 * i, 0.0});
    p.path_points = path;
    p.waypoints = wps;
    p.target_speed = 14.0;
    return p;
  };
  const auto log = run_episode(build_world(default_scenario(ScenarioKind::ConstructionObstacle), 0), blind);
  int statics = 0;
  for (const auto& e : log.infractions) statics += e.kind == InfractionKind::CollisionStatic;
  CHECK(statics >= 1);
}

TEST_CASE("zero-length route completes immediately") {
  auto def = default_scenario(ScenarioKind::ParkedObstacle);
  World w = build_world(def, 0);
  auto layout = std::make_shared<Layout>(*w.layout);
  layout->route = Polyline({{0.0, -1.75}, {0.0, -1.75}});
  w.layout = layout;
  const auto log = run_episode(w, expert_planner);
  CHECK(log.termination == "route_end");
  CHECK(log.steps.empty());
  CHECK(log.route_length == 0.0);
}

TEST_CASE("planner failures abort and are recorded") {
  PlannerFn broken = [](const World& w, const scene::Scene&) -> PlanOutput {
    if (w.time > 1.0) throw NumericalFault(2, "nan activations");
    return expert::to_plan_output(expert::expert_plan(w));
  };
  const auto log = run_episode(build_world(default_scenario(ScenarioKind::StopSign), 0), broken);
  CHECK(log.termination == "planner_failure");
  CHECK(log.planner_failure.find("nan") != std::string::npos);
}

TEST_CASE("episodes are deterministic and logs round-trip") {
  const auto def = default_scenario(ScenarioKind::ParkingCutIn);
  const auto a = run_episode(build_world(def, 4), expert_planner);
  const auto b = run_episode(build_world(def, 4), expert_planner);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].ego.x == b.steps[i].ego.x);
    CHECK(a.steps[i].ego.y == b.steps[i].ego.y);
    CHECK(a.steps[i].control.steer == b.steps[i].control.steer);
  }

  const auto path = (std::filesystem::temp_directory_path() / "plancraft_log_test.jsonl").string();
  write_episode_log(path, a);
  const auto back = read_episode_log(path);
  std::filesystem::remove(path);
  CHECK(back.steps.size() == a.steps.size());
  CHECK(back.termination == a.termination);
  CHECK(back.route_length == a.route_length);
  CHECK(back.steps.back().ego.x == a.steps.back().ego.x);
  REQUIRE(back.steps.front().scene.has_value());
  CHECK(back.steps.front().scene->objects.size() == a.steps.front().scene->objects.size());
  for (std::size_t i = 1; i < back.steps.size(); ++i) CHECK(back.steps[i].time > back.steps[i - 1].time);
}

TEST_CASE("scenario definitions round-trip and validate") {
  for (auto kind : kAllScenarioKinds) {
    const auto def = default_scenario(kind);
    const auto back = scenario_from_json(to_json(def));
    CHECK(back.kind == def.kind);
    CHECK(back.params == def.params);
    CHECK(back.map == def.map);
    CHECK(back.route.size() == def.route.size());
  }
  auto j = to_json(default_scenario(ScenarioKind::Accident));
  j["params"]["bogus"] = 1;
  CHECK_THROWS_AS(scenario_from_json(j), SchemaError);
  j = to_json(default_scenario(ScenarioKind::Accident));
  j["params"]["trigger_distance"] = -3.0;
  CHECK_THROWS_AS(scenario_from_json(j), SchemaError);
  j = to_json(default_scenario(ScenarioKind::Accident));
  j["kind"] = "Tornado";
  CHECK_THROWS_AS(scenario_from_json(j), SchemaError);
}
