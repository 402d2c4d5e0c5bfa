#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "plancraft/control.hpp"
#include "plancraft/errors.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/scenarios.hpp"
#include "plancraft/world.hpp"

using namespace plancraft;
using namespace plancraft::control;

namespace {

std::vector<Vec2> straight_waypoints(double spacing) {
  std::vector<Vec2> wps;
  for (int i = 1; i <= 8; ++i) wps.push_back({spacing * i, 0.0});
  return wps;
}

}  // namespace

TEST_CASE("target speed decodes the third and fourth waypoints") {
  std::vector<Vec2> wps(8, Vec2{0.0, 0.0});
  wps[2] = {5.0, 0.0};
  wps[3] = {7.5, 0.0};
  CHECK(target_speed_from_waypoints(wps) == doctest::Approx(10.0));
  CHECK(target_speed_from_waypoints(wps) * 3.6 == doctest::Approx(36.0));

  wps[3] = wps[2];
  CHECK(target_speed_from_waypoints(wps) == 0.0);
  CHECK(target_speed_from_waypoints(straight_waypoints(0.5)) == doctest::Approx(2.0));
  CHECK_THROWS_AS(target_speed_from_waypoints({{1, 0}, {2, 0}, {3, 0}}), InvariantError);
}

TEST_CASE("target speed is invariant to rigid transforms") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec2> wps;
    for (int i = 0; i < 8; ++i) wps.push_back({u(rng), u(rng)});
    const double a = ang(rng);
    const Vec2 t{u(rng), u(rng)};
    std::vector<Vec2> moved;
    for (const auto& p : wps) moved.push_back(rotate(p, a) + t);
    CHECK(target_speed_from_waypoints(moved) == doctest::Approx(target_speed_from_waypoints(wps)).epsilon(1e-9));
  }
}

TEST_CASE("lateral controller sign and degenerate paths") {
  LateralPid pid;
  std::vector<Vec2> straight;
  for (int i = 1; i <= 20; ++i) straight.push_back({static_cast<double>(i), 0.0});
  CHECK(pid.step(straight, 5.0) == 0.0);

  pid.reset();
  std::vector<Vec2> left;
  for (int i = 1; i <= 20; ++i) left.push_back({static_cast<double>(i), 1.0});
  CHECK(pid.step(left, 5.0) > 0.0);

  pid.reset();
  CHECK(pid.step(std::vector<Vec2>(20, Vec2{0.0, 0.0}), 5.0) == 0.0);
  CHECK_FALSE(heading_error({}, 3.0).has_value());
}

TEST_CASE("lookahead follows the clamped linear law") {
  ControllerConfig cfg;
  CHECK(lookahead_distance(0.0, cfg) == doctest::Approx(2.4));
  CHECK(lookahead_distance(10.0, cfg) == doctest::Approx(5.9));
  CHECK(lookahead_distance(100.0, cfg) == doctest::Approx(10.0));
}

TEST_CASE("PID integral stays within its clamp under any error sequence") {
  ControllerConfig cfg;
  cfg.ki = 0.1;
  LateralPid pid(cfg);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> y(-30.0, 30.0);
  for (int k = 0; k < 2000; ++k) {
    std::vector<Vec2> path;
    const double lat = y(rng);
    for (int i = 1; i <= 20; ++i) path.push_back({static_cast<double>(i), lat});
    const double steer = pid.step(path, 8.0);
    CHECK(std::abs(pid.integral()) <= cfg.integral_limit + 1e-12);
    CHECK(std::abs(steer) <= kMaxSteer);
  }
}

TEST_CASE("closed loop on a 50 m circle keeps cross-track below 0.3 m") {
  constexpr double kRadius = 50.0;
  const Vec2 center{0.0, kRadius};
  sim::EgoState ego;
  ego.speed = 8.0;
  LateralPid pid;
  double steer = 0.0;
  double worst = 0.0;
  for (int k = 0; k < 1200; ++k) {
    if (k % 2 == 0) {
      const double phi0 = std::atan2(ego.y - center.y, ego.x - center.x);
      std::vector<Vec2> path;
      for (int i = 1; i <= 20; ++i) {
        const double phi = phi0 + i / kRadius;
        path.push_back(point_to_ego_frame(center + Vec2{std::cos(phi), std::sin(phi)} * kRadius, ego.pose()));
      }
      steer = pid.step(path, ego.speed);
    }
    ego = sim::step_ego(ego, {steer, 0.0}, 0.05);
    if (k >= 600) worst = std::max(worst, std::abs((ego.position() - center).norm() - kRadius));
  }
  MESSAGE("steady-state cross-track " << worst);
  CHECK(worst < 0.3);
}

TEST_CASE("straight road: expert labels and controllers converge") {
  sim::ScenarioDef def = sim::default_scenario(sim::ScenarioKind::ParkedObstacle);
  def.map.length = 260.0;
  def.route = sim::default_route(def.map);
  sim::World w;
  w.layout = sim::build_layout(def.map, def.route);
  w.speed_limit_index = 0;
  w.ego.y = w.layout->route.point_at(0.0).y + 0.5;

  PlanFollower follower;
  ControlCommand cmd;
  double target = 0.0;
  double worst_speed_err = 0.0;
  for (int k = 0; w.ego_on_route().s < 200.0; ++k) {
    REQUIRE(k < 20 * 60);
    if (k % 2 == 0) {
      const auto label = expert::expert_plan(w);
      target = label.target_speed;
      cmd = follower.command(expert::to_plan_output(label), w.ego.speed);
    }
    w.ego = sim::step_ego(w.ego, cmd, 0.05);
    w.time += 0.05;
    if (w.time > 5.0 + 1e-9) worst_speed_err = std::max(worst_speed_err, std::abs(w.ego.speed - target) / target);
  }
  CHECK(std::abs(w.ego_on_route().lateral) < 0.1);
  CHECK(worst_speed_err < 0.05);
}

TEST_CASE("longitudinal law clamps and brakes") {
  ControllerConfig cfg;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> v(0.0, 40.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = longitudinal_control(v(rng), v(rng), cfg);
    CHECK(a >= kMinAccel);
    CHECK(a <= kMaxAccel);
  }
  CHECK(longitudinal_control(10.0, 0.0, cfg) == kMinAccel);
}

TEST_CASE("least-squares fit recovers the reference law") {
  std::vector<LongitudinalSample> samples;
  for (double v = 0.0; v <= 14.0; v += 0.5) {
    for (double vt = 0.5; vt <= 14.0; vt += 0.5) {
      if (std::abs(vt - v) > 2.4) continue;
      samples.push_back({v, vt, reference_accel(v, vt)});
    }
  }
  const auto k = fit_longitudinal(samples);
  CHECK(k.c0 == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(k.c1 == doctest::Approx(1.2));
  CHECK(k.c2 == doctest::Approx(0.0).epsilon(1e-9));

  ControllerConfig cfg;
  cfg.longitudinal = k;
  for (double v : {2.0, 8.0, 13.0}) CHECK(std::abs(longitudinal_control(v, v, cfg)) < 0.3);
  CHECK(longitudinal_control(10.0, 0.0, cfg) <= -5.9);
  CHECK_THROWS_AS(fit_longitudinal({{1, 1, 0}}), InvariantError);
}

TEST_CASE("controller config rejects unknown keys") {
  ControllerConfig cfg;
  cfg.kp = 2.0;
  cfg.longitudinal.c1 = 0.7;
  const auto back = controller_config_from_json(to_json(cfg));
  CHECK(back.kp == 2.0);
  CHECK(back.longitudinal.c1 == 0.7);
  CHECK_THROWS_AS(controller_config_from_json({{"kq", 1.0}}), ConfigError);
}
