#include <doctest.h>

#include <thread>

#include "plancraft/errors.hpp"
#include "plancraft/run.hpp"
#include "plancraft/scene_json.hpp"
#include "plancraft/service.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace plancraft;
using nlohmann::json;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.raster_channels = {4, 4, 4};
  return c;
}

const service::Service& svc() {
  static const service::Service s(model::PlannerModel(tiny()), run::templates(run::default_run_config()));
  return s;
}

json scene_json() {
  const auto w = sim::build_world(sim::default_scenario(sim::ScenarioKind::ConstructionObstacle), 0);
  return scene_to_json(sim::make_scene(w), RasterFormat::RunLength);
}

json ok(const service::Response& r) {
  CHECK(r.status == 200);
  return json::parse(r.body);
}

}  // namespace

TEST_CASE("healthz") {
  const auto j = ok(svc().handle("GET", "/healthz", ""));
  CHECK(j == json{{"status", "ok"}, {"model", svc().model().id()}});
  CHECK(svc().handle("POST", "/healthz", "").status == 405);
  CHECK(svc().handle("GET", "/nope", "").status == 404);
}

TEST_CASE("scenarios lists every template with a default scene") {
  const auto j = ok(svc().handle("GET", "/scenarios", ""));
  REQUIRE(j["scenarios"].size() == 9);
  for (const auto& s : j["scenarios"]) {
    CHECK(s["name"].is_string());
    CHECK_NOTHROW(scene_from_json(s["scene"]));
  }
}

TEST_CASE("infer") {
  SUBCASE("empty-object scene") {
    auto s = scene_json();
    s["objects"] = json::array();
    const auto j = ok(svc().handle("POST", "/infer", s.dump()));
    const auto plan = plan_from_json(j["plan"]);
    CHECK_NOTHROW(check_presence(plan, HeadKind::PathWaypoints));
    CHECK(j["target_speed"].get<double>() == plan.target_speed);
    CHECK(j["model"] == svc().model().id());
  }
  SUBCASE("deterministic") {
    const auto body = scene_json().dump();
    CHECK(svc().handle("POST", "/infer", body).body == svc().handle("POST", "/infer", body).body);
  }
  SUBCASE("19 route points is an invariant violation naming route") {
    auto s = scene_json();
    s["route"].erase(s["route"].size() - 1);
    const auto r = svc().handle("POST", "/infer", s.dump());
    CHECK(r.status == 422);
    CHECK(json::parse(r.body)["field"] == "route");
  }
  SUBCASE("schema violations name the field") {
    auto s = scene_json();
    s.erase("route");
    auto r = svc().handle("POST", "/infer", s.dump());
    CHECK(r.status == 400);
    CHECK(json::parse(r.body)["field"] == "route");
    r = svc().handle("POST", "/infer", "{not json");
    CHECK(r.status == 400);
    CHECK(json::parse(r.body)["field"] == "body");
  }
}

TEST_CASE("perturb endpoints") {
  const auto s = scene_json();
  SUBCASE("apply") {
    const json body{{"scene", s}, {"spec", {{"ops", {{{"op", "RemoveObject"}, {"id", 0}}}}}}};
    const auto j = ok(svc().handle("POST", "/perturb/apply", body.dump()));
    CHECK(j["scene"]["objects"].size() == s["objects"].size() - 1);
    CHECK(j["off_drivable"] == false);
  }
  SUBCASE("apply with an unknown id") {
    const json body{{"scene", s}, {"spec", {{"ops", {{{"op", "RemoveObject"}, {"id", 99}}}}}}};
    const auto r = svc().handle("POST", "/perturb/apply", body.dump());
    CHECK(r.status == 422);
    CHECK(json::parse(r.body)["field"] == "ops[0].id");
  }
  SUBCASE("apply with a bad op") {
    const json body{{"scene", s}, {"spec", {{"ops", {{{"op", "Teleport"}}}}}}};
    const auto r = svc().handle("POST", "/perturb/apply", body.dump());
    CHECK(r.status == 400);
    CHECK(json::parse(r.body)["field"] == "spec.ops[0].op");
  }
  SUBCASE("sweep") {
    const json body{{"scene", s}, {"sweep", {{"axis", "EgoRotation"}, {"from", 0}, {"to", 30}, {"steps", 31}}}};
    const auto r1 = svc().handle("POST", "/perturb/sweep", body.dump());
    const auto j = ok(r1);
    REQUIRE(j["records"].size() == 31);
    CHECK(j["axis"] == "EgoRotation");
    CHECK(j["units"] == "deg");
    CHECK(j["jumps"].is_array());
    CHECK(svc().handle("POST", "/perturb/sweep", body.dump()).body == r1.body);
  }
  SUBCASE("sweep with one step") {
    const json body{{"scene", s}, {"sweep", {{"axis", "EgoRotation"}, {"from", 0}, {"to", 30}, {"steps", 1}}}};
    CHECK(svc().handle("POST", "/perturb/sweep", body.dump()).status == 400);
  }
}

TEST_CASE("concurrent requests match serial ones") {
  const auto body = scene_json().dump();
  const auto serial = svc().handle("POST", "/infer", body).body;
  std::vector<std::string> out(4);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < out.size(); ++i) {
    threads.emplace_back([&, i] { out[i] = svc().handle("POST", "/infer", body).body; });
  }
  for (auto& t : threads) t.join();
  for (const auto& o : out) CHECK(o == serial);
}

TEST_CASE("http round trip") {
  service::HttpServer server(svc());
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.run(); });
  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/healthz");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["status"] == "ok");
  auto s = scene_json();
  s["route"].erase(0);
  res = client.Post("/infer", s.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 422);
  server.stop();
  t.join();
}

TEST_CASE("run config") {
  const auto d = run::default_run_config();
  CHECK(run::to_json(run::run_config_from_json(run::to_json(d))) == run::to_json(d));
  CHECK_THROWS_AS(run::run_config_from_json(json{{"seed", 1}}), ConfigError);
  CHECK_THROWS_AS(run::run_config_from_json(json{{"version", 2}}), ConfigError);
  CHECK_THROWS_AS(run::run_config_from_json(json{{"version", 1}, {"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(run::run_config_from_json(json{{"version", 1}, {"model", {{"depth", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run::run_config_from_json(json{{"version", 1}, {"eval", {{"controller", {{"kq", 1}}}}}}), ConfigError);
  const auto c = run::run_config_from_json(json{{"version", 1}, {"model", {{"head", "PATH"}}}, {"train", {{"epochs", 3}}}});
  CHECK(c.model.head == HeadKind::PATH);
  CHECK(c.model.d_model == d.model.d_model);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.lr == d.train.lr);
  const auto p = run::paper_scale(d);
  CHECK(p.model.d_model == 256);
  CHECK(p.train.epochs == 30);
  CHECK(p.train.batch_size == 128);
  CHECK(p.train.lr == 1e-4);
  CHECK(run::templates(d).size() == 9);
  auto only = d;
  only.scenarios = {"StopSign"};
  REQUIRE(run::templates(only).size() == 1);
  only.scenarios = {"Roundabout"};
  CHECK_THROWS_AS(run::templates(only), ConfigError);
}
