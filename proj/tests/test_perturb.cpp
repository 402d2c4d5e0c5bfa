#include <doctest.h>

#include <cmath>

#include "plancraft/errors.hpp"
#include "plancraft/perturb.hpp"
#include "plancraft/scenarios.hpp"
#include "plancraft/scene_json.hpp"
#include "plancraft/world.hpp"

using namespace plancraft;
using namespace plancraft::perturb;
using scene::ObjectClass;
using scene::OrientedBox;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.raster_channels = {4, 4, 4};
  return c;
}

sim::World world(sim::ScenarioKind kind = sim::ScenarioKind::ConstructionObstacle) {
  return sim::build_world(sim::default_scenario(kind), 0);
}

SweepResult speeds(const std::vector<double>& v) {
  SweepResult r;
  for (std::size_t i = 0; i < v.size(); ++i) {
    SweepRecord rec;
    rec.value = static_cast<double>(i);
    rec.target_speed = v[i];
    r.records.push_back(rec);
  }
  return r;
}

PlanOutput straight(double length) {
  PlanOutput p;
  std::vector<Vec2> pts;
  for (int i = 1; i <= 20; ++i) pts.push_back({length * i / 20.0, 0.0});
  p.path_points = pts;
  return p;
}

}  // namespace

TEST_CASE("empty spec keeps the scene") {
  const auto s = sim::make_scene(world());
  const auto a = apply(s, {});
  CHECK(a.scene == s);
  CHECK(a.ids.size() == s.objects.size());
  CHECK_FALSE(a.off_drivable());
}

TEST_CASE("ego rotation and its inverse") {
  const auto s = sim::make_scene(world());
  REQUIRE_FALSE(s.objects.empty());
  const auto a = apply(s, {{Op::rotate_ego(deg_to_rad(10.0))}});
  const auto b = apply(a.scene, {{Op::rotate_ego(deg_to_rad(-10.0))}});
  REQUIRE(b.scene.objects.size() == s.objects.size());
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    CHECK(std::abs(b.scene.objects[i].center_x - s.objects[i].center_x) < 1e-9);
    CHECK(std::abs(b.scene.objects[i].center_y - s.objects[i].center_y) < 1e-9);
    CHECK(std::abs(b.scene.objects[i].yaw - s.objects[i].yaw) < 1e-9);
  }
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) {
    CHECK((b.scene.route.points[i] - s.route.points[i]).norm() < 1e-9);
  }
  // Objects rotate the opposite way in the ego frame.
  const auto& o = s.objects.front();
  const Vec2 expect = rotate({o.center_x, o.center_y}, deg_to_rad(-10.0));
  CHECK((Vec2{a.scene.objects.front().center_x, a.scene.objects.front().center_y} - expect).norm() < 1e-9);
}

TEST_CASE("object ops") {
  scene::Scene s = sim::make_scene(world());
  const auto n = s.objects.size();
  REQUIRE(n >= 2);

  SUBCASE("translate") {
    const auto a = apply(s, {{Op::translate_object(1, 2.0, -1.0)}});
    CHECK(a.scene.objects[1].center_x == s.objects[1].center_x + 2.0);
    CHECK(a.scene.objects[1].center_y == s.objects[1].center_y - 1.0);
    CHECK(a.scene.objects[0] == s.objects[0]);
  }
  SUBCASE("remove and add") {
    OrientedBox box{10.0, 0.0, 0.0, 2.0, 1.0, 0.0, ObjectClass::Vehicle};
    const auto a = apply(s, {{Op::remove_object(0), Op::add_object(box), Op::translate_object(static_cast<int>(n), 1.0, 0.0)}});
    CHECK(a.scene.objects.size() == n);
    CHECK(a.ids.front() == 1);
    CHECK(a.ids.back() == static_cast<int>(n));
    CHECK(a.scene.objects.back().center_x == 11.0);
  }
  SUBCASE("unresolved id names the op") {
    try {
      apply(s, {{Op::remove_object(0), Op::remove_object(0)}});
      FAIL("expected InvariantError");
    } catch (const InvariantError& e) {
      CHECK(e.field() == "ops[1].id");
    }
    CHECK_THROWS_AS(apply(s, {{Op::translate_object(99, 1.0, 0.0)}}), InvariantError);
  }
  SUBCASE("range filter after all ops") {
    const auto a = apply(s, {{Op::translate_object(0, 500.0, 0.0)}});
    CHECK(a.scene.objects.size() == n - 1);
    const auto b = apply(s, {{Op::translate_object(0, 500.0, 0.0), Op::translate_object(0, -500.0, 0.0)}});
    CHECK(b.scene.objects.size() == n);
  }
  SUBCASE("speed limit") {
    CHECK(apply(s, {{Op::set_speed_limit(3)}}).scene.speed_limit_index == 3);
    CHECK_THROWS_AS(apply(s, {{Op::set_speed_limit(4)}}), InvariantError);
  }
}

TEST_CASE("translated ego frame") {
  const auto s = sim::make_scene(world());
  const auto a = apply(s, {{Op::translate_ego(5.0, 0.0)}});
  for (std::size_t i = 0; i < a.scene.objects.size(); ++i) {
    const auto& before = s.objects[static_cast<std::size_t>(a.ids[i])];
    CHECK(a.scene.objects[i].center_x == doctest::Approx(before.center_x - 5.0));
  }
  const auto cell = scene::RoadRaster::cell_of(scene::RoadRaster::cell_center(40, 70) + Vec2{5.0, 0.0});
  REQUIRE(cell);
  CHECK(a.scene.raster.at(40, 70) == s.raster.at(cell->first, cell->second));
}

TEST_CASE("off-drivable is flagged") {
  const auto w = world();
  const auto s = sim::make_scene(w);
  const auto a = apply(s, {{Op::translate_ego(0.0, 25.0), Op::translate_ego(0.0, -25.0)}});
  REQUIRE(a.off_drivable_ops == std::vector<int>{0});
  const auto ctx = world_context(w);
  CHECK(apply(s, {{Op::translate_ego(0.0, 25.0)}}, &ctx).off_drivable());
  CHECK_FALSE(apply(s, {{Op::translate_ego(10.0, 0.0)}}, &ctx).off_drivable());
}

TEST_CASE("context re-rendering matches the world") {
  auto w = world();
  const auto s = sim::make_scene(w);
  const auto ctx = world_context(w);
  const auto a = apply(s, {{Op::translate_ego(4.0, 0.0), Op::rotate_ego(deg_to_rad(5.0))}}, &ctx);
  const Pose g = from_ego_frame({4.0, 0.0, deg_to_rad(5.0)}, w.ego.pose());
  w.ego.x = g.x;
  w.ego.y = g.y;
  w.ego.yaw = g.yaw;
  const auto direct = sim::make_scene(w);
  CHECK(a.scene.raster == direct.raster);
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) {
    CHECK((a.scene.route.points[i] - direct.route.points[i]).norm() < 1e-9);
  }
}

TEST_CASE("op JSON") {
  PerturbationSpec spec{{Op::translate_object(2, 1.0, -0.5), Op::rotate_ego(deg_to_rad(15.0)), Op::translate_ego(3.0, 0.0),
                         Op::remove_object(1), Op::add_object({5.0, 1.0, 0.1, 2.0, 1.0, 0.0, ObjectClass::EmergencyVehicle}),
                         Op::set_speed_limit(2)}};
  const auto j = to_json(spec);
  CHECK(j["ops"][1]["deg"].get<double>() == doctest::Approx(15.0));
  const auto back = spec_from_json(j);
  REQUIRE(back.ops.size() == spec.ops.size());
  CHECK(to_json(back) == j);
  try {
    spec_from_json(nlohmann::json::parse(R"({"ops":[{"op":"RotateEgo","deg":1},{"op":"Teleport"}]})"));
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.field() == "spec.ops[1].op");
  }
  CHECK_THROWS_AS(spec_from_json(nlohmann::json::parse(R"({"ops":[{"op":"RotateEgo","deg":1,"dx":2}]})")), SchemaError);
}

TEST_CASE("jump detector") {
  CHECK(jump_detector(speeds(std::vector<double>(31, 4.0))).empty());
  std::vector<double> step(31, 0.0);
  for (int i = 12; i < 31; ++i) step[static_cast<std::size_t>(i)] = 10.0;
  const auto one = jump_detector(speeds(step));
  REQUIRE(one.size() == 1);
  CHECK(one[0].first == 12.0);
  CHECK(one[0].second == 10.0);
  const auto two = jump_detector(speeds({0, 0, 5, 5, 2, 9, 9}));
  REQUIRE(two.size() == 2);
  CHECK(two[0] == std::pair{2.0, 5.0});
  CHECK(two[1] == std::pair{5.0, 7.0});
  CHECK(jump_detector(speeds({0, 2.5, 5})).empty());
  CHECK(jump_detector(speeds({0, 2.5, 5}), 2.0).size() == 2);
  auto gap = speeds({0, 0, 8});
  gap.records[1].target_speed = std::nan("");
  CHECK(jump_detector(gap).size() == 1);
}

TEST_CASE("min clearance") {
  const auto path = straight(20.0);
  CHECK(std::isinf(min_clearance(path, 2.45, 1.0, {})));
  const OrientedBox far{10.0, 30.0, 0.0, 0.5, 0.5, 0.0, ObjectClass::StaticObstacle};
  CHECK(min_clearance(path, 2.45, 1.0, {far}) == doctest::Approx(28.5));
  const OrientedBox on{10.0, 0.0, 0.0, 0.5, 0.5, 0.0, ObjectClass::StaticObstacle};
  CHECK(min_clearance(path, 2.45, 1.0, {on}) < 0.0);
  const OrientedBox beside{10.0, 1.8, 0.0, 0.5, 0.5, 0.0, ObjectClass::StaticObstacle};
  CHECK(std::abs(min_clearance(path, 2.45, 1.0, {beside}) - 0.3) < 0.05);
  PlanOutput wp;
  wp.waypoints = std::vector<Vec2>{{5.0, 0.0}, {10.0, 0.0}};
  CHECK(min_clearance(wp, 2.45, 1.0, {beside}) == doctest::Approx(0.3));
  PlanOutput none;
  CHECK_THROWS_AS(min_clearance(none, 2.45, 1.0, {}), InvariantError);
  PlanOutput still;
  still.waypoints = std::vector<Vec2>(8, Vec2{0.0, 0.0});
  CHECK_THROWS_AS(min_clearance(still, 2.45, 1.0, {}), InvariantError);
}

TEST_CASE("sweeps") {
  const model::PlannerModel m(tiny());
  const auto s = sim::make_scene(world());

  SUBCASE("rotation sweep is ordered and reproducible") {
    SweepRequest req;
    const auto a = sweep(s, req, m);
    REQUIRE(a.records.size() == 31);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].value == doctest::Approx(static_cast<double>(i)));
      CHECK(a.records[i].error.empty());
      CHECK(std::isfinite(a.records[i].target_speed));
    }
    CHECK(a.records.front().plan->path_points == m.infer(s).path_points);
    const auto b = sweep(s, req, m);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(a.model_id == m.id());
    const auto csv = to_csv(a);
    CHECK(csv.rfind("EgoRotation_deg,target_speed_mps\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 32);
  }
  SUBCASE("speed limit axis") {
    SweepRequest req;
    req.axis = Axis::SpeedLimitIndex;
    req.from = 0;
    req.to = 3;
    req.steps = 4;
    const auto r = sweep(s, req, m);
    REQUIRE(r.records.size() == 4);
    CHECK(r.records[3].value == 3.0);
    req.steps = 7;
    CHECK_THROWS_AS(sweep(s, req, m), ConfigError);
  }
  SUBCASE("lateral offset moves only the chosen objects") {
    SweepRequest req;
    req.axis = Axis::ObjectLateralOffset;
    req.from = -1.0;
    req.to = 1.0;
    req.steps = 3;
    req.objects = {0};
    req.reference = 0;
    const auto r = sweep(s, req, m);
    for (const auto& rec : r.records) {
      REQUIRE(rec.reference_distance);
      CHECK(*rec.reference_distance ==
            doctest::Approx(s.objects[0].center_x - s.objects[0].half_length - sim::kEgoHalfLength));
    }
  }
  SUBCASE("distance along the route") {
    SweepRequest req;
    req.axis = Axis::EgoDistanceAlongRoute;
    req.from = 0.0;
    req.to = 10.0;
    req.steps = 3;
    req.reference = 0;
    const auto r = sweep(s, req, m);
    REQUIRE(r.records[0].reference_distance);
    REQUIRE(r.records[2].reference_distance);
    CHECK(*r.records[0].reference_distance - *r.records[2].reference_distance == doctest::Approx(10.0).epsilon(0.02));
  }
  SUBCASE("request JSON") {
    SweepRequest req;
    req.axis = Axis::ObjectLateralOffset;
    req.objects = {1, 2};
    req.reference = 1;
    req.base.ops.push_back(Op::set_speed_limit(1));
    const auto back = sweep_request_from_json(to_json(req));
    CHECK(to_json(back) == to_json(req));
    auto j = to_json(req);
    j["objects"] = nlohmann::json::array();
    CHECK_THROWS_AS(sweep_request_from_json(j), SchemaError);
    j = to_json(req);
    j["steps"] = 1;
    CHECK_THROWS_AS(sweep_request_from_json(j), ConfigError);
  }
}

TEST_CASE("presets") {
  for (const auto& p : builtin_presets()) {
    CAPTURE(p.name);
    CHECK(to_json(preset_from_json(to_json(p))) == to_json(p));
    CHECK(find_preset(p.name).name == p.name);
  }
  CHECK(builtin_presets().size() == 7);
  CHECK_THROWS_AS(find_preset("no_such_preset"), ConfigError);
  auto j = to_json(find_preset("fig2_cones"));
  j["extra"] = 1;
  CHECK_THROWS_AS(preset_from_json(j), SchemaError);
}

TEST_CASE("cone removal keeps the sign") {
  const model::PlannerModel m(tiny());
  const auto run = run_preset(find_preset("fig2_cones"), m);
  REQUIRE(run.perturbed_scene);
  int signs = 0;
  int cones = 0;
  for (const auto& b : run.base_scene.objects) cones += b.cls == ObjectClass::StaticObstacle && b.half_length <= 0.25;
  for (const auto& b : run.perturbed_scene->objects) {
    if (b.cls != ObjectClass::StaticObstacle) continue;
    CHECK(b.half_length > 0.25);
    ++signs;
  }
  CHECK(cones > 0);
  CHECK(signs == 1);
  CHECK(run.base_plan);
  CHECK(run.perturbed_plan);
  CHECK_FALSE(run.off_drivable);
}

TEST_CASE("post-crash preset overlaps the wreck") {
  const model::PlannerModel m(tiny());
  const auto run = run_preset(find_preset("fig10_postcrash"), m);
  REQUIRE(run.perturbed_scene);
  bool near = false;
  for (const auto& b : run.perturbed_scene->objects) {
    if (b.cls == ObjectClass::Vehicle && std::abs(b.center_x - 3.0) < 1e-6 && std::abs(b.center_y) < 1e-6) near = true;
  }
  CHECK(near);
}

TEST_CASE("snapshot conditions") {
  const auto stopped = snapshot_world(find_preset("fig5_rotation"));
  CHECK(stopped.ego.speed < 0.05);
  const auto p = find_preset("fig7_cutin");
  const auto w = snapshot_world(p);
  REQUIRE(w.scenario.triggered);
  CHECK(w.time - w.scenario.trigger_time == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(w.params.anchor_s - w.ego_on_route().s < w.params.trigger_distance);
  auto never = p;
  never.snapshot.until = "time";
  never.snapshot.value = 10.0;
  never.snapshot.max_time = 5.0;
  CHECK_THROWS_AS(snapshot_world(never), InvariantError);
}
