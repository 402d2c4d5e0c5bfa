#include "plancraft/control.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "plancraft/errors.hpp"

namespace plancraft::control {

nlohmann::json to_json(const ControllerConfig& c) {
  return {{"lookahead_base", c.lookahead_base},
          {"lookahead_gain", c.lookahead_gain},
          {"lookahead_min", c.lookahead_min},
          {"lookahead_max", c.lookahead_max},
          {"kp", c.kp},
          {"ki", c.ki},
          {"kd", c.kd},
          {"integral_limit", c.integral_limit},
          {"dt", c.dt},
          {"stop_speed", c.stop_speed},
          {"longitudinal", {{"c0", c.longitudinal.c0}, {"c1", c.longitudinal.c1}, {"c2", c.longitudinal.c2}}}};
}

ControllerConfig controller_config_from_json(const nlohmann::json& j) {
  ControllerConfig c;
  if (!j.is_object()) throw ConfigError("controller: expected object");
  for (const auto& [key, value] : j.items()) {
    const auto number = [&](double& dst) {
      if (!value.is_number()) throw ConfigError("controller." + key + ": expected number");
      dst = value.get<double>();
    };
    if (key == "lookahead_base") number(c.lookahead_base);
    else if (key == "lookahead_gain") number(c.lookahead_gain);
    else if (key == "lookahead_min") number(c.lookahead_min);
    else if (key == "lookahead_max") number(c.lookahead_max);
    else if (key == "kp") number(c.kp);
    else if (key == "ki") number(c.ki);
    else if (key == "kd") number(c.kd);
    else if (key == "integral_limit") number(c.integral_limit);
    else if (key == "dt") number(c.dt);
    else if (key == "stop_speed") number(c.stop_speed);
    else if (key == "longitudinal") {
      if (!value.is_object()) throw ConfigError("controller.longitudinal: expected object");
      for (const auto& [k, v] : value.items()) {
        if (!v.is_number()) throw ConfigError("controller.longitudinal." + k + ": expected number");
        if (k == "c0") c.longitudinal.c0 = v.get<double>();
        else if (k == "c1") c.longitudinal.c1 = v.get<double>();
        else if (k == "c2") c.longitudinal.c2 = v.get<double>();
        else throw ConfigError("controller.longitudinal." + k + ": unknown key");
      }
    } else {
      throw ConfigError("controller." + key + ": unknown key");
    }
  }
  if (!(c.dt > 0.0)) throw ConfigError("controller.dt: must be positive");
  if (!(c.lookahead_min > 0.0 && c.lookahead_min <= c.lookahead_max)) {
    throw ConfigError("controller.lookahead_min: must be positive and <= lookahead_max");
  }
  return c;
}

double target_speed_from_waypoints(const std::vector<Vec2>& waypoints) {
  if (waypoints.size() < 4) throw InvariantError("waypoints", "need at least 4 waypoints");
  return (waypoints[3] - waypoints[2]).norm() / kWaypointDt;
}

double lookahead_distance(double speed, const ControllerConfig& config) {
  return std::clamp(config.lookahead_base + config.lookahead_gain * speed, config.lookahead_min,
                    config.lookahead_max);
}

std::optional<double> heading_error(const std::vector<Vec2>& path, double lookahead) {
  Vec2 prev{0.0, 0.0};
  double s = 0.0;
  Vec2 target = prev;
  bool moved = false;
  for (const auto& p : path) {
    const double seg = (p - prev).norm();
    if (seg > 0.0) {
      if (s + seg >= lookahead) {
        target = prev + (p - prev) * ((lookahead - s) / seg);
        moved = true;
        break;
      }
      s += seg;
      moved = true;
    }
    prev = p;
    target = p;
  }
  if (!moved || target.norm() < 1e-9) return std::nullopt;
  return std::atan2(target.y, target.x);
}

void LateralPid::reset() {
  integral_ = 0.0;
  prev_error_ = 0.0;
  has_prev_ = false;
}

double LateralPid::step(const std::vector<Vec2>& path, double speed) {
  const auto err = heading_error(path, lookahead_distance(speed, config_));
  if (!err) return 0.0;
  const double e = *err;
  integral_ = std::clamp(integral_ + e * config_.dt, -config_.integral_limit, config_.integral_limit);
  const double derivative = has_prev_ ? (e - prev_error_) / config_.dt : 0.0;
  prev_error_ = e;
  has_prev_ = true;
  return std::clamp(config_.kp * e + config_.ki * integral_ + config_.kd * derivative, -kMaxSteer, kMaxSteer);
}

double longitudinal_control(double speed, double target_speed, const ControllerConfig& config) {
  if (target_speed <= config.stop_speed) return kMinAccel;
  const auto& k = config.longitudinal;
  const double a = k.c0 + k.c1 * (target_speed - speed) + k.c2 * target_speed;
  return std::clamp(a, kMinAccel, kMaxAccel);
}

double reference_accel(double speed, double target_speed) {
  return std::clamp(1.2 * (target_speed - speed), kMinAccel, kMaxAccel);
}

LongitudinalCoeffs fit_longitudinal(const std::vector<LongitudinalSample>& samples, double stop_speed) {
  std::vector<const LongitudinalSample*> used;
  for (const auto& s : samples) {
    if (s.target_speed > stop_speed) used.push_back(&s);
  }
  if (used.size() < 3) throw InvariantError("samples", "need at least 3 samples above the stop speed");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(used.size()), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(used.size()));
  for (std::size_t i = 0; i < used.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = 1.0;
    a(r, 1) = used[i]->target_speed - used[i]->speed;
    a(r, 2) = used[i]->target_speed;
    b(r) = used[i]->accel;
  }
  const Eigen::Vector3d x = a.colPivHouseholderQr().solve(b);
  return {x(0), x(1), x(2)};
}

ControlCommand PlanFollower::command(const PlanOutput& plan, double speed) {
  ControlCommand cmd;
  if (plan.path_points) cmd.steer = lateral_.step(*plan.path_points, speed);
  else if (plan.waypoints) cmd.steer = lateral_.step(*plan.waypoints, speed);
  cmd.accel = longitudinal_control(speed, plan.target_speed, config_);
  return cmd;
}

}  // namespace plancraft::control
