#ifndef PLANCRAFT_CONTROL_HPP_
#define PLANCRAFT_CONTROL_HPP_

#include <optional>
#include <vector>

#include <json.hpp>

#include "plancraft/geometry.hpp"
#include "plancraft/plan.hpp"

namespace plancraft::control {

inline constexpr double kMaxSteer = 1.22;
inline constexpr double kMinAccel = -6.0;
inline constexpr double kMaxAccel = 3.0;

struct ControlCommand {
  double steer = 0.0;
  double accel = 0.0;
};

/// Affine longitudinal law accel = c0 + c1 (v_target - v) + c2 v_target.
struct LongitudinalCoeffs {
  double c0 = 0.0;
  double c1 = 1.2;
  double c2 = 0.0;
};

struct ControllerConfig {
  double lookahead_base = 2.4;
  double lookahead_gain = 0.35;
  double lookahead_min = 2.0;
  double lookahead_max = 10.0;
  double kp = 1.25;
  double ki = 0.0;
  double kd = 0.05;
  double integral_limit = 0.5;
  double dt = 0.1;
  /// Targets at or below this speed command full braking.
  double stop_speed = 0.1;
  LongitudinalCoeffs longitudinal;
};

nlohmann::json to_json(const ControllerConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ControllerConfig controller_config_from_json(const nlohmann::json& j);

/// ||wp[3] - wp[2]|| / 0.25. Throws InvariantError for fewer than 4 points.
double target_speed_from_waypoints(const std::vector<Vec2>& waypoints);

double lookahead_distance(double speed, const ControllerConfig& config);

/// Signed angle (left positive) from the ego heading to the point at arc
/// length `lookahead` along the ego-frame path that starts at the origin.
/// Returns nullopt for a degenerate path.
std::optional<double> heading_error(const std::vector<Vec2>& path, double lookahead);

/// PID on the heading error to a speed-dependent lookahead point. Holds the
/// integral and derivative memory of one episode.
class LateralPid {
 public:
  explicit LateralPid(ControllerConfig config = {}) : config_(config) {}

  double step(const std::vector<Vec2>& path, double speed);
  double integral() const { return integral_; }
  void reset();

 private:
  ControllerConfig config_;
  double integral_ = 0.0;
  double prev_error_ = 0.0;
  bool has_prev_ = false;
};

double longitudinal_control(double speed, double target_speed, const ControllerConfig& config);

/// Reference law used to produce fitting data from expert rollouts.
double reference_accel(double speed, double target_speed);

struct LongitudinalSample {
  double speed = 0.0;
  double target_speed = 0.0;
  double accel = 0.0;
};
/// Least-squares fit of the affine law (samples with target <= stop_speed are
/// excluded since that regime is handled by the brake override).
LongitudinalCoeffs fit_longitudinal(const std::vector<LongitudinalSample>& samples, double stop_speed = 0.1);

/// Lateral and longitudinal controllers driven by one plan. Uses path points
/// for steering when present and waypoints otherwise.
class PlanFollower {
 public:
  explicit PlanFollower(ControllerConfig config = {}) : config_(config), lateral_(config) {}

  ControlCommand command(const PlanOutput& plan, double speed);
  const ControllerConfig& config() const { return config_; }

 private:
  ControllerConfig config_;
  LateralPid lateral_;
};

}  // namespace plancraft::control

#endif  // PLANCRAFT_CONTROL_HPP_
