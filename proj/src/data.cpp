#include "plancraft/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "plancraft/errors.hpp"
#include "plancraft/scene_json.hpp"

namespace plancraft::data {

namespace fs = std::filesystem;

Dataset collect(const CollectConfig& config) {
  if (!(config.augment_fraction >= 0.0 && config.augment_fraction <= 1.0)) {
    throw ConfigError("collect.augment_fraction: must lie in [0, 1]");
  }
  if (config.shard_size == 0) throw ConfigError("collect.shard_size: must be positive");
  Dataset ds;
  sim::EpisodeConfig ep = config.episode;
  ep.record_scenes = false;
  for (const auto& def : config.templates) {
    for (auto seed : config.seeds) {
      std::vector<TrainingSample> episode;
      double infeasible_since = -1.0;
      int step = 0;
      sim::PlannerFn planner = [&](const sim::World& w, const scene::Scene& scene) {
        auto label = config.policy ? config.policy(w) : expert::expert_plan(w, config.expert);
        if (!label.feasible) {
          if (infeasible_since < 0.0) infeasible_since = w.time;
          if (w.time - infeasible_since > config.max_infeasible_time) {
            throw Error("expert found no feasible path for more than " + std::to_string(config.max_infeasible_time) +
                        " s in " + def.name + " seed " + std::to_string(seed));
          }
        } else {
          infeasible_since = -1.0;
        }
        auto out = expert::to_plan_output(label);
        episode.push_back({scene, std::move(label), {def.kind, seed, step++, false}});
        return out;
      };
      const auto log = sim::run_episode(sim::build_world(def, seed), planner, ep);
      if (!log.planner_failure.empty()) throw Error(log.planner_failure);
      ++ds.stats.episodes;
      const bool collided = std::any_of(log.infractions.begin(), log.infractions.end(),
                                        [](const sim::InfractionEvent& e) { return sim::is_collision(e.kind); });
      if (collided) {
        ++ds.stats.discarded_episodes;
        continue;
      }
      for (auto& s : episode) ds.samples.push_back(std::move(s));
    }
  }
  apply_augmentation(ds.samples, config.augment_fraction, config.shard_size, config.seed, config.augment, &ds.stats);
  ds.stats.samples = ds.samples.size();
  return ds;
}

AugmentDraw draw_augmentation(std::mt19937_64& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> lat(-config.max_lateral, config.max_lateral);
  std::uniform_real_distribution<double> rot(-config.max_rotation_deg, config.max_rotation_deg);
  AugmentDraw d;
  d.lateral = lat(rng);
  d.rotation = deg_to_rad(rot(rng));
  return d;
}

namespace {

struct Frame {
  Vec2 origin;
  double yaw;
  Vec2 point(const Vec2& p) const { return rotate(p - origin, -yaw); }
};

std::vector<Vec2> hermite(const Vec2& p1, const Vec2& t1, int steps) {
  const double len = p1.norm();
  const Vec2 m0{len, 0.0};
  const Vec2 m1 = t1 * len;
  std::vector<Vec2> out;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double h10 = t3 - 2.0 * t2 + t;
    const double h01 = -2.0 * t3 + 3.0 * t2;
    const double h11 = t3 - t2;
    out.push_back(m0 * h10 + p1 * h01 + m1 * h11);
  }
  return out;
}

}  // namespace

std::optional<TrainingSample> augment(const TrainingSample& sample, const AugmentDraw& draw,
                                      const AugmentConfig& config) {
  if (draw.lateral == 0.0 && draw.rotation == 0.0) return sample;
  const Frame f{{0.0, draw.lateral}, draw.rotation};
  const auto& old_raster = sample.scene.raster;
  const auto ego_cell = scene::RoadRaster::cell_of(f.origin);
  if (!ego_cell || old_raster.at(ego_cell->first, ego_cell->second) == scene::RasterClass::Background) {
    return std::nullopt;
  }

  TrainingSample out;
  out.meta = sample.meta;
  out.meta.augmented = true;
  auto& sc = out.scene;
  sc.speed_limit_index = sample.scene.speed_limit_index;
  sc.ego_speed = sample.scene.ego_speed;
  std::vector<scene::OrientedBox> moved;
  for (auto b : sample.scene.objects) {
    const Vec2 c = f.point({b.center_x, b.center_y});
    b.center_x = c.x;
    b.center_y = c.y;
    b.yaw = normalize_angle(b.yaw - draw.rotation);
    moved.push_back(b);
  }
  sc.objects = scene::filter_by_range(moved);
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) sc.route.points[i] = f.point(sample.scene.route.points[i]);
  for (int r = 0; r < scene::kRasterSize; ++r) {
    for (int c = 0; c < scene::kRasterSize; ++c) {
      const Vec2 old = rotate(scene::RoadRaster::cell_center(r, c), draw.rotation) + f.origin;
      const auto cell = scene::RoadRaster::cell_of(old);
      sc.raster.set(r, c, cell ? old_raster.at(cell->first, cell->second) : scene::RasterClass::Background);
    }
  }

  // Original path in the new frame, starting at the old ego position and
  // extended past its end.
  std::vector<Vec2> orig{f.point({0.0, 0.0})};
  for (const auto& p : sample.label.path_points) orig.push_back(f.point(p));
  const Vec2 tail = orig.back() - orig[orig.size() - 2];
  orig.push_back(orig.back() + tail * (30.0 / std::max(tail.norm(), 1e-9)));
  const Polyline original(orig);
  const double s_join = original.project({0.0, 0.0}).s + config.rejoin_distance;
  std::vector<Vec2> recovery = hermite(original.point_at(s_join), original.tangent_at(s_join), 60);
  for (std::size_t i = 0; i < orig.size(); ++i) {
    if (original.arc_length_at(i) > s_join + 1e-6) recovery.push_back(orig[i]);
  }
  const Polyline curve(recovery);
  out.label.path_points = resample_chord(curve, 0.0, {0.0, 0.0}, kPathPoints, 1.0);

  double dist = 0.0;
  Vec2 prev{0.0, 0.0};
  for (const auto& wp : sample.label.waypoints) {
    dist += (wp - prev).norm();
    prev = wp;
    out.label.waypoints.push_back(curve.point_at(dist));
  }
  out.label.target_speed = sample.label.target_speed;
  out.label.feasible = sample.label.feasible;
  return out;
}

void apply_augmentation(std::vector<TrainingSample>& samples, double fraction, std::size_t shard_size,
                        std::uint64_t seed, const AugmentConfig& config, CollectStats* stats) {
  if (fraction <= 0.0) return;
  for (std::size_t begin = 0, block = 0; begin < samples.size(); begin += shard_size, ++block) {
    const std::size_t end = std::min(samples.size(), begin + shard_size);
    const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(end - begin)));
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + block);
    std::vector<std::size_t> order(end - begin);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = begin + i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t done = 0;
    for (std::size_t idx : order) {
      if (done == want) break;
      if (samples[idx].meta.augmented) continue;
      for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        const auto draw = draw_augmentation(rng, config);
        auto aug = augment(samples[idx], draw, config);
        if (aug) {
          aug->meta.augmented = true;
          samples[idx] = std::move(*aug);
          ++done;
          break;
        }
        if (stats) ++stats->rejected_augmentations;
      }
    }
    if (stats) stats->augmented += done;
  }
}

void validate_sample(const TrainingSample& s) {
  for (std::size_t i = 0; i < s.scene.objects.size(); ++i) {
    const auto& b = s.scene.objects[i];
    for (double e : {b.half_length, b.half_width}) {
      if (!(e >= 0.1 && e <= 10.0)) {
        throw InvariantError("objects[" + std::to_string(i) + "]", "extent " + std::to_string(e) + " outside [0.1, 10] m");
      }
    }
  }
  auto finite = [](const std::vector<Vec2>& pts, const char* field) {
    for (const auto& p : pts) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvariantError(std::string("label.") + field, "non-finite");
    }
  };
  finite(s.label.path_points, "path_points");
  finite(s.label.waypoints, "waypoints");
  if (!std::isfinite(s.label.target_speed)) throw InvariantError("label.target_speed", "non-finite");
}

std::array<double, scene::kNumObjectClasses> class_balance(const std::vector<TrainingSample>& samples) {
  std::array<double, scene::kNumObjectClasses> frac{};
  for (const auto& s : samples) {
    std::array<bool, scene::kNumObjectClasses> seen{};
    for (const auto& b : s.scene.objects) seen[static_cast<std::size_t>(b.cls)] = true;
    for (std::size_t k = 0; k < frac.size(); ++k) frac[k] += seen[k];
  }
  if (!samples.empty()) {
    for (auto& f : frac) f /= static_cast<double>(samples.size());
  }
  return frac;
}

nlohmann::json label_to_json(const expert::PlanLabel& l) {
  return {{"path_points", points_to_json(l.path_points)},
          {"waypoints", points_to_json(l.waypoints)},
          {"target_speed", l.target_speed},
          {"feasible", l.feasible}};
}

expert::PlanLabel label_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("label", "expected object");
  expert::PlanLabel l;
  l.path_points = points_from_json(j.at("path_points"), "label.path_points");
  l.waypoints = points_from_json(j.at("waypoints"), "label.waypoints");
  if (!j.contains("target_speed") || !j.at("target_speed").is_number()) {
    throw SchemaError("label.target_speed", "expected number");
  }
  l.target_speed = j.at("target_speed").get<double>();
  l.feasible = j.value("feasible", true);
  return l;
}

nlohmann::json sample_to_json(const TrainingSample& s) {
  auto j = scene_to_json(s.scene, RasterFormat::RunLength);
  j["label"] = label_to_json(s.label);
  j["meta"] = {{"kind", sim::to_string(s.meta.kind)},
               {"seed", s.meta.seed},
               {"step", s.meta.step},
               {"augmented", s.meta.augmented}};
  return j;
}

TrainingSample sample_from_json(const nlohmann::json& j) {
  TrainingSample s;
  s.scene = scene_from_json(j);
  if (!j.contains("label")) throw SchemaError("label", "missing");
  if (!j.contains("meta") || !j.at("meta").is_object()) throw SchemaError("meta", "missing");
  try {
    s.label = label_from_json(j.at("label"));
    const auto& m = j.at("meta");
    const auto kind = sim::scenario_kind_from_string(m.at("kind").get<std::string>());
    if (!kind) throw SchemaError("meta.kind", "unknown scenario kind");
    s.meta.kind = *kind;
    s.meta.seed = m.at("seed").get<std::uint64_t>();
    s.meta.step = m.at("step").get<int>();
    s.meta.augmented = m.at("augmented").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("sample", e.what());
  }
  return s;
}

namespace {

std::string shard_name(std::size_t i) {
  std::ostringstream os;
  os << "shard_" << std::setw(5) << std::setfill('0') << i << ".jsonl";
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IntegrityError(p.filename().string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void write_shards(const std::vector<TrainingSample>& samples, const std::string& dir, std::size_t shard_size,
                  const nlohmann::json& extra) {
  if (shard_size == 0 || shard_size > 10000) throw ConfigError("shard_size: must lie in [1, 10000]");
  fs::create_directories(dir);
  nlohmann::json manifest = {{"version", 1}, {"total", samples.size()}, {"shard_size", shard_size}};
  manifest["shards"] = nlohmann::json::array();
  std::size_t augmented_total = 0;
  for (std::size_t begin = 0, i = 0; begin < samples.size() || (samples.empty() && i == 0); begin += shard_size, ++i) {
    const std::size_t end = std::min(samples.size(), begin + shard_size);
    std::string text;
    std::size_t augmented = 0;
    for (std::size_t k = begin; k < end; ++k) {
      text += sample_to_json(samples[k]).dump();
      text += '\n';
      augmented += samples[k].meta.augmented;
    }
    augmented_total += augmented;
    const auto name = shard_name(i);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (fs::path(dir) / name).string());
    out << text;
    manifest["shards"].push_back({{"file", name}, {"count", end - begin}, {"augmented", augmented}, {"sha256", sha256_hex(text)}});
    if (samples.empty()) break;
  }
  manifest["augmented"] = augmented_total;
  if (!extra.is_null()) manifest["info"] = extra;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

std::vector<TrainingSample> read_shards(const std::string& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(fs::path(dir) / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("manifest.json: ") + e.what());
  }
  if (manifest.value("version", 0) != 1) throw IntegrityError("manifest.json: unsupported version");
  std::vector<TrainingSample> samples;
  for (const auto& entry : manifest.at("shards")) {
    const auto name = entry.at("file").get<std::string>();
    const auto text = read_file(fs::path(dir) / name);
    if (sha256_hex(text) != entry.at("sha256").get<std::string>()) throw IntegrityError(name + ": hash mismatch");
    std::istringstream in(text);
    std::string line;
    std::size_t count = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        samples.push_back(sample_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw IntegrityError(name + ": line " + std::to_string(count + 1) + ": " + e.what());
      }
      ++count;
    }
    if (count != entry.at("count").get<std::size_t>()) throw IntegrityError(name + ": sample count mismatch");
  }
  return samples;
}

}  // namespace plancraft::data
