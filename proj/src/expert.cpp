#include "plancraft/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "plancraft/errors.hpp"

namespace plancraft::expert {

using sim::Actor;
using sim::ActorRole;
using sim::kEgoHalfLength;
using sim::kEgoHalfWidth;
using sim::World;

namespace {

constexpr double kLaneHalf = 1.75;
constexpr double kGridStep = 0.5;
constexpr int kGridPoints = 141;
constexpr double kCorridorMargin = 0.2;
constexpr double kPredictHorizon = 1.0;
constexpr double kPedestrianHorizon = 1.5;
constexpr double kIntegrationDt = 0.01;
constexpr double kOncomingHalfWidth = 0.95;
constexpr double kOncomingSafety = 0.5;

struct Footprint {
  double s_min = std::numeric_limits<double>::infinity();
  double s_max = -std::numeric_limits<double>::infinity();
  double d_min = std::numeric_limits<double>::infinity();
  double d_max = -std::numeric_limits<double>::infinity();
};

Footprint footprint(const Polyline& route, const scene::OrientedBox& box) {
  Footprint f;
  for (const auto& c : box.corners()) {
    const auto p = route.project(c);
    f.s_min = std::min(f.s_min, p.s);
    f.s_max = std::max(f.s_max, p.s);
    f.d_min = std::min(f.d_min, p.lateral);
    f.d_max = std::max(f.d_max, p.lateral);
  }
  return f;
}

scene::OrientedBox predicted_box(const Actor& a, double horizon) {
  scene::OrientedBox b = a.box();
  b.center_x += a.speed * horizon * std::cos(a.pose.yaw);
  b.center_y += a.speed * horizon * std::sin(a.pose.yaw);
  return b;
}

Vec2 vertex_tangent(const std::vector<Vec2>& pts, std::size_t i) {
  Vec2 t{0.0, 0.0};
  if (i > 0) {
    const Vec2 d = pts[i] - pts[i - 1];
    if (d.norm() > 0.0) t = t + d * (1.0 / d.norm());
  }
  if (i + 1 < pts.size()) {
    const Vec2 d = pts[i + 1] - pts[i];
    if (d.norm() > 0.0) t = t + d * (1.0 / d.norm());
  }
  const double n = t.norm();
  return n > 0.0 ? t * (1.0 / n) : Vec2{1.0, 0.0};
}

// Left normal with vertex tangents interpolated along each segment, so that
// lateral offsets stay continuous across polyline vertices.
Vec2 smooth_normal(const Polyline& route, double s) {
  const auto& pts = route.points();
  std::size_t i = 0;
  std::size_t hi = pts.size() - 1;
  while (hi - i > 1) {
    const std::size_t mid = (i + hi) / 2;
    if (route.arc_length_at(mid) <= s) i = mid;
    else hi = mid;
  }
  const double seg = route.arc_length_at(i + 1) - route.arc_length_at(i);
  const double u = seg > 0.0 ? std::clamp((s - route.arc_length_at(i)) / seg, 0.0, 1.0) : 0.0;
  Vec2 t = vertex_tangent(pts, i) * (1.0 - u) + vertex_tangent(pts, i + 1) * u;
  t = t * (1.0 / t.norm());
  return {-t.y, t.x};
}

struct Cluster {
  double s_min = 0.0;
  double s_max = 0.0;
  double d_min = 0.0;
  double d_max = 0.0;
  double offset = 0.0;
  double ramp = 0.0;
  double margin = 0.0;

  double ramp_start() const { return s_min - margin - ramp; }
  double ramp_end() const { return s_max + margin + ramp; }
  double value(double s) const {
    const double s2 = s_min - margin;
    const double s3 = s_max + margin;
    if (s < s2) return offset * smoothstep((s - ramp_start()) / ramp);
    if (s <= s3) return offset;
    return offset * (1.0 - smoothstep((s - s3) / ramp));
  }
};

struct Shift {
  double value = 0.0;
  double until = 0.0;
  double ramp = 8.0;
  double at(double s) const {
    if (s <= until) return value;
    return value * (1.0 - smoothstep((s - until) / ramp));
  }
};

double jitter(std::uint64_t seed, double s, double amplitude) {
  if (amplitude <= 0.0) return 0.0;
  std::uint64_t h = seed ^ (static_cast<std::uint64_t>(std::llround(s * 10.0)) * 0x9E3779B97F4A7C15ULL);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  const double u = static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
  return amplitude * (2.0 * u - 1.0);
}

bool opposite_heading(const Polyline& route, const Actor& a, double s) {
  return std::cos(a.pose.yaw - route.heading_at(s)) < 0.0;
}

// Time to cover `distance` from rest with constant acceleration up to `v_cap`.
double time_to_cover(double distance, double accel, double v_cap) {
  if (distance <= 0.0) return 0.0;
  const double d_acc = v_cap * v_cap / (2.0 * accel);
  if (distance <= d_acc) return std::sqrt(2.0 * distance / accel);
  return v_cap / accel + (distance - d_acc) / v_cap;
}

struct Planner {
  const World& w;
  const ExpertConfig& cfg;
  const Polyline& route;
  double s_e = 0.0;
  double d_e = 0.0;
  double v_lim = 0.0;
  double ramp = 0.0;
  std::vector<Cluster> clusters;
  std::vector<Shift> shifts;

  double target_lateral(double s) const {
    double d = 0.0;
    for (const auto& c : clusters) d = std::max(d, c.value(s));
    for (const auto& sh : shifts) d = std::min(d, sh.at(s));
    return d;
  }

  double planned_lateral(double s) const {
    const double blend = 1.0 - smoothstep((s - s_e) / cfg.recovery_length);
    return target_lateral(s) + (d_e - target_lateral(s_e)) * blend;
  }

  bool in_corridor(const Footprint& f) const {
    const double lo = std::max(f.s_min, s_e);
    if (f.s_max < lo) return false;
    const double half = kEgoHalfWidth + kCorridorMargin;
    for (double s = lo;; s += 1.0) {
      const double sc = std::min(s, f.s_max);
      const double d = planned_lateral(sc);
      if (f.d_min < d + half && f.d_max > d - half) return true;
      if (sc >= f.s_max) break;
    }
    return false;
  }

  void build_clusters() {
    std::vector<Cluster> raw;
    const double reach = kEgoHalfWidth + cfg.clearance;
    for (const auto& a : w.actors) {
      if (!sim::is_physical(a)) continue;
      const bool parked = a.role == ActorRole::Static || (a.role == ActorRole::CutIn && !a.triggered);
      if (!parked) continue;
      const Footprint f = footprint(route, a.box());
      if (f.s_max < s_e - 10.0 || f.s_min > s_e + 150.0) continue;
      if (f.d_min >= reach || f.d_max <= -reach) continue;
      Cluster c;
      c.s_min = f.s_min;
      c.s_max = f.s_max;
      c.d_min = f.d_min;
      c.d_max = f.d_max;
      raw.push_back(c);
    }
    std::sort(raw.begin(), raw.end(), [](const Cluster& a, const Cluster& b) { return a.s_min < b.s_min; });
    const double merge_gap = 2.0 * (ramp + cfg.longitudinal_margin);
    for (const auto& c : raw) {
      if (!clusters.empty() && c.s_min - clusters.back().s_max < merge_gap) {
        auto& last = clusters.back();
        last.s_max = std::max(last.s_max, c.s_max);
        last.d_min = std::min(last.d_min, c.d_min);
        last.d_max = std::max(last.d_max, c.d_max);
      } else {
        clusters.push_back(c);
      }
    }
    for (auto& c : clusters) {
      c.ramp = ramp;
      c.margin = cfg.longitudinal_margin;
      c.offset = std::max(0.0, c.d_max + kEgoHalfWidth + cfg.clearance + jitter(w.seed, c.s_min, cfg.trajectory_noise));
    }
  }

  void build_shifts() {
    for (const auto& a : w.actors) {
      if (!sim::is_physical(a) || a.role != ActorRole::Traffic) continue;
      const Footprint f = footprint(route, a.box());
      if (f.s_max < s_e - 5.0 || f.s_min > s_e + 40.0) continue;
      if (!opposite_heading(route, a, 0.5 * (f.s_min + f.s_max))) continue;
      const double needed = f.d_min - cfg.encroach_clearance - kEgoHalfWidth;
      if (needed >= 0.0) continue;
      Shift sh;
      sh.value = std::max(cfg.max_right_shift, needed);
      sh.until = f.s_max + 5.0;
      shifts.push_back(sh);
    }
  }

  // Route s where the return ramp brings the ego back out of the oncoming
  // lane's safety band.
  double oncoming_exit(const Cluster& c) const {
    const double threshold = 2.0 * kLaneHalf - kOncomingHalfWidth - kEgoHalfWidth - kOncomingSafety;
    if (c.offset <= threshold) return c.s_max + c.margin;
    const double level = 1.0 - threshold / c.offset;
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < 40; ++i) {
      const double mid = 0.5 * (lo + hi);
      (smoothstep(mid) < level ? lo : hi) = mid;
    }
    return c.s_max + c.margin + c.ramp * hi;
  }

  bool oncoming_free(const Cluster& c) const {
    const double v_cap = std::min(v_lim, std::sqrt(cfg.lateral_accel * ramp * ramp / (6.0 * std::max(c.offset, 0.1))));
    const double exit = oncoming_exit(c);
    const double horizon = time_to_cover(exit - s_e, cfg.overtake_accel, v_cap) + cfg.overtake_time_margin;
    for (const auto& a : w.actors) {
      if (!sim::is_physical(a) || a.role != ActorRole::Traffic) continue;
      const Footprint f = footprint(route, a.box());
      if (f.s_max < s_e - 5.0) continue;
      if (!opposite_heading(route, a, 0.5 * (f.s_min + f.s_max))) continue;
      if (f.s_min - a.speed * horizon <= exit + cfg.overtake_distance_margin) return false;
    }
    return true;
  }
};

double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
  const double u = (x - xs[i]) / (xs[i + 1] - xs[i]);
  return ys[i] + (ys[i + 1] - ys[i]) * u;
}

struct Profile {
  PlanLabel label;
  ExpertTrace trace;
};

Profile plan(const World& w, const ExpertConfig& cfg) {
  Profile out;
  const Polyline& route = w.layout->route;
  const auto proj = w.ego_on_route();
  if (std::abs(proj.lateral) > 10.0) {
    out.label = full_stop_label();
    return out;
  }
  Planner p{w, cfg, route, 0.0, 0.0, 0.0, 0.0, {}, {}};
  p.s_e = proj.s;
  p.d_e = proj.lateral;
  p.v_lim = std::min(w.speed_limit(), cfg.max_speed);
  p.ramp = std::clamp(1.5 * w.speed_limit(), 8.0, 12.0);
  p.build_clusters();
  p.build_shifts();

  // Planned path on a 0.5 m route grid.
  std::vector<Vec2> pts(kGridPoints);
  std::vector<double> grid_s(kGridPoints);
  for (int k = 0; k < kGridPoints; ++k) {
    const double s = p.s_e + kGridStep * k;
    grid_s[static_cast<std::size_t>(k)] = s;
    pts[static_cast<std::size_t>(k)] = route.point_at(s) + smooth_normal(route, s) * p.planned_lateral(s);
  }
  const Polyline path(pts);
  std::vector<double> sigma(kGridPoints);
  for (std::size_t k = 0; k < sigma.size(); ++k) sigma[k] = path.arc_length_at(k);
  const auto sigma_of = [&](double s) {
    if (s <= grid_s.front()) return s - grid_s.front();
    if (s >= grid_s.back()) return sigma.back() + (s - grid_s.back());
    return interpolate(grid_s, sigma, s);
  };

  for (const auto& c : p.clusters) {
    out.trace.max_lateral = std::max(out.trace.max_lateral, c.offset);
  }

  std::vector<double> stops;
  std::vector<double> leaders;

  // Overtake gating on the first upcoming cluster that leaves the lane.
  for (const auto& c : p.clusters) {
    if (c.ramp_end() <= p.s_e || c.offset + kEgoHalfWidth <= kLaneHalf - 0.05) continue;
    out.trace.overtaking = true;
    out.trace.committed = p.s_e >= c.ramp_start();
    if (!out.trace.committed && !p.oncoming_free(c)) {
      out.trace.waiting_for_oncoming = true;
      stops.push_back(sigma_of(c.ramp_start() - 1.0));
    }
    break;
  }

  const double front = p.s_e + kEgoHalfLength;
  for (const auto& a : w.actors) {
    if (!a.active) continue;
    if (a.role == ActorRole::TrafficLightLine || a.role == ActorRole::StopSignLine) {
      if (!a.visible) continue;
      const Footprint f = footprint(route, a.box());
      if (front > f.s_min + 0.5 || std::abs(0.5 * (f.d_min + f.d_max)) > 3.0) continue;
      stops.push_back(sigma_of(f.s_min) - kEgoHalfLength - cfg.stop_line_margin);
      continue;
    }
    if (a.cls == scene::ObjectClass::Pedestrian) {
      if (a.speed <= sim::kStationarySpeed) continue;
      for (const auto& box : {a.box(), predicted_box(a, kPedestrianHorizon)}) {
        const Footprint f = footprint(route, box);
        if (f.s_max < front || f.s_min > p.s_e + 80.0) continue;
        if (f.d_max > -kLaneHalf - 0.5 && f.d_min < 3.0 * kLaneHalf + 0.5) {
          leaders.push_back(sigma_of(std::max(f.s_min, front)));
          break;
        }
      }
      continue;
    }
    for (const auto& box : {a.box(), predicted_box(a, kPredictHorizon)}) {
      const Footprint f = footprint(route, box);
      if (f.s_max < p.s_e + 0.5 * kEgoHalfLength || f.s_min > p.s_e + 80.0) continue;
      if (p.in_corridor(f)) {
        leaders.push_back(sigma_of(std::max(f.s_min, front)));
        break;
      }
    }
  }

  if (const auto& j = w.layout->junction; j && front < j->entry_s) {
    for (const auto& a : w.actors) {
      if (!sim::is_physical(a) || a.cls != scene::ObjectClass::EmergencyVehicle || a.speed < 0.5) continue;
      const Vec2 to_center = j->center - a.pose.position();
      const Vec2 velocity{std::cos(a.pose.yaw), std::sin(a.pose.yaw)};
      if (to_center.norm() < cfg.emergency_radius && velocity.dot(to_center) > 0.0) {
        stops.push_back(sigma_of(j->entry_s) - kEgoHalfLength - cfg.stop_line_margin);
        break;
      }
    }
  }

  // Speed caps along the path.
  std::vector<double> vmax(kGridPoints, p.v_lim);
  for (int k = 2; k + 2 < kGridPoints; ++k) {
    const Vec2 a = pts[static_cast<std::size_t>(k - 2)];
    const Vec2 b = pts[static_cast<std::size_t>(k)];
    const Vec2 c = pts[static_cast<std::size_t>(k + 2)];
    const double denom = (b - a).norm() * (c - b).norm() * (c - a).norm();
    if (denom <= 1e-12) continue;
    const double kappa = 2.0 * std::abs((b - a).cross(c - a)) / denom;
    if (kappa > 1e-6) vmax[static_cast<std::size_t>(k)] = std::min(vmax[static_cast<std::size_t>(k)], std::sqrt(cfg.lateral_accel / kappa));
  }
  for (int k = kGridPoints - 2; k >= 0; --k) {
    const auto i = static_cast<std::size_t>(k);
    vmax[i] = std::min(vmax[i], std::sqrt(vmax[i + 1] * vmax[i + 1] + 2.0 * cfg.stop_decel * (sigma[i + 1] - sigma[i])));
  }
  const auto speed_at = [&](double sig) {
    double v = interpolate(sigma, vmax, sig);
    for (double st : stops) {
      const double rem = st - sig;
      v = std::min(v, rem < cfg.creep_distance ? 0.0 : std::sqrt(2.0 * cfg.stop_decel * rem));
    }
    for (double rear : leaders) {
      const double gap = rear - sig - kEgoHalfLength;
      v = std::min(v, std::sqrt(2.0 * cfg.gap_decel * std::max(0.0, gap - cfg.gap_min)));
    }
    return v;
  };
  out.trace.speed_cap = speed_at(0.0);

  std::vector<double> wp_sigma;
  double sig = 0.0;
  const int steps_per_wp = static_cast<int>(std::lround(kWaypointDt / kIntegrationDt));
  for (std::size_t i = 0; i < kWaypoints; ++i) {
    for (int n = 0; n < steps_per_wp; ++n) sig += speed_at(sig) * kIntegrationDt;
    wp_sigma.push_back(sig);
  }

  const Pose ego = w.ego.pose();
  PlanLabel& label = out.label;
  for (const auto& q : resample_chord(path, 0.0, pts.front(), kPathPoints, 1.0)) {
    label.path_points.push_back(point_to_ego_frame(q, ego));
  }
  for (double s : wp_sigma) label.waypoints.push_back(point_to_ego_frame(path.point_at(s), ego));
  label.target_speed = control::target_speed_from_waypoints(label.waypoints);
  return out;
}

}  // namespace

nlohmann::json to_json(const ExpertConfig& c) {
  return {{"clearance", c.clearance},
          {"longitudinal_margin", c.longitudinal_margin},
          {"gap_decel", c.gap_decel},
          {"gap_min", c.gap_min},
          {"stop_decel", c.stop_decel},
          {"stop_line_margin", c.stop_line_margin},
          {"creep_distance", c.creep_distance},
          {"lateral_accel", c.lateral_accel},
          {"recovery_length", c.recovery_length},
          {"encroach_clearance", c.encroach_clearance},
          {"max_right_shift", c.max_right_shift},
          {"overtake_accel", c.overtake_accel},
          {"overtake_time_margin", c.overtake_time_margin},
          {"overtake_distance_margin", c.overtake_distance_margin},
          {"emergency_radius", c.emergency_radius},
          {"max_speed", c.max_speed},
          {"trajectory_noise", c.trajectory_noise}};
}

ExpertConfig expert_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("expert: expected object");
  ExpertConfig c;
  const std::pair<const char*, double*> fields[] = {
      {"clearance", &c.clearance},
      {"longitudinal_margin", &c.longitudinal_margin},
      {"gap_decel", &c.gap_decel},
      {"gap_min", &c.gap_min},
      {"stop_decel", &c.stop_decel},
      {"stop_line_margin", &c.stop_line_margin},
      {"creep_distance", &c.creep_distance},
      {"lateral_accel", &c.lateral_accel},
      {"recovery_length", &c.recovery_length},
      {"encroach_clearance", &c.encroach_clearance},
      {"max_right_shift", &c.max_right_shift},
      {"overtake_accel", &c.overtake_accel},
      {"overtake_time_margin", &c.overtake_time_margin},
      {"overtake_distance_margin", &c.overtake_distance_margin},
      {"emergency_radius", &c.emergency_radius},
      {"max_speed", &c.max_speed},
      {"trajectory_noise", &c.trajectory_noise},
  };
  for (const auto& [key, value] : j.items()) {
    double* dst = nullptr;
    for (const auto& [name, ptr] : fields) {
      if (key == name) dst = ptr;
    }
    if (!dst) throw ConfigError("expert." + key + ": unknown key");
    if (!value.is_number()) throw ConfigError("expert." + key + ": expected number");
    *dst = value.get<double>();
  }
  if (c.clearance < 0.0) throw ConfigError("expert.clearance: must be non-negative");
  if (c.gap_decel <= 0.0 || c.stop_decel <= 0.0) throw ConfigError("expert: decelerations must be positive");
  return c;
}

PlanLabel full_stop_label() {
  PlanLabel label;
  for (std::size_t i = 0; i < kPathPoints; ++i) label.path_points.push_back({static_cast<double>(i + 1), 0.0});
  label.waypoints.assign(kWaypoints, Vec2{0.0, 0.0});
  label.target_speed = 0.0;
  label.feasible = false;
  return label;
}

PlanLabel expert_plan(const World& world, const ExpertConfig& config, ExpertTrace* trace) {
  Profile p = plan(world, config);
  if (trace) *trace = p.trace;
  return p.label;
}

double longitudinal_target(const World& world, const ExpertConfig& config) {
  return plan(world, config).trace.speed_cap;
}

PlanOutput to_plan_output(const PlanLabel& label) {
  PlanOutput out;
  out.path_points = label.path_points;
  out.waypoints = label.waypoints;
  out.target_speed = label.target_speed;
  return out;
}

void validate_label(const PlanLabel& label, double max_speed) {
  if (label.path_points.size() != kPathPoints) throw InvariantError("label.path_points", "expected 20 points");
  if (label.waypoints.size() != kWaypoints) throw InvariantError("label.waypoints", "expected 8 points");
  for (std::size_t i = 0; i < label.path_points.size(); ++i) {
    const auto& q = label.path_points[i];
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw InvariantError("label.path_points", "non-finite point");
    if (i > 0 && std::abs((q - label.path_points[i - 1]).norm() - 1.0) > 1e-6) {
      throw InvariantError("label.path_points[" + std::to_string(i) + "]", "spacing must be 1 m");
    }
  }
  for (const auto& q : label.waypoints) {
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw InvariantError("label.waypoints", "non-finite point");
  }
  if (!(label.target_speed >= 0.0 && label.target_speed <= max_speed + 1e-9)) {
    throw InvariantError("label.target_speed", "out of range");
  }
}

}  // namespace plancraft::expert
