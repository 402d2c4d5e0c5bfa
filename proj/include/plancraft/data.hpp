#ifndef PLANCRAFT_DATA_HPP_
#define PLANCRAFT_DATA_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/episode.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/hash.hpp"
#include "plancraft/scenarios.hpp"

namespace plancraft::data {

struct SampleMeta {
  sim::ScenarioKind kind = sim::ScenarioKind::ConstructionObstacle;
  std::uint64_t seed = 0;
  int step = 0;
  bool augmented = false;
  bool operator==(const SampleMeta&) const = default;
};

struct TrainingSample {
  scene::Scene scene;
  expert::PlanLabel label;
  SampleMeta meta;
};

struct AugmentConfig {
  double max_lateral = 1.0;
  double max_rotation_deg = 20.0;
  /// Path length over which the recovery curve rejoins the original path.
  double rejoin_distance = 6.0;
  int max_attempts = 16;
};

struct CollectConfig {
  std::vector<sim::ScenarioDef> templates;
  std::vector<std::uint64_t> seeds;
  expert::ExpertConfig expert;
  /// Labelling policy; the expert with `expert` when empty.
  std::function<expert::PlanLabel(const sim::World&)> policy;
  sim::EpisodeConfig episode;
  AugmentConfig augment;
  double augment_fraction = 0.3;
  std::size_t shard_size = 10000;
  /// Seed of the augmentation draws.
  std::uint64_t seed = 0;
  double max_infeasible_time = 30.0;
};

struct CollectStats {
  int episodes = 0;
  int discarded_episodes = 0;
  std::size_t samples = 0;
  std::size_t augmented = 0;
  std::size_t rejected_augmentations = 0;
};

struct Dataset {
  std::vector<TrainingSample> samples;
  CollectStats stats;
};

/// One sample per planner tick of every expert episode. Episodes with a
/// collision are dropped whole. Throws Error when the expert reports no
/// feasible path for longer than max_infeasible_time.
Dataset collect(const CollectConfig& config);

struct AugmentDraw {
  double lateral = 0.0;
  double rotation = 0.0;  // rad
};

AugmentDraw draw_augmentation(std::mt19937_64& rng, const AugmentConfig& config);

/// Moves the ego by `draw` (lateral shift, then rotation) and re-expresses the
/// scene and labels in the new frame; the label path rejoins the original
/// path. Returns nullopt when the new ego position is off the drivable area.
std::optional<TrainingSample> augment(const TrainingSample& sample, const AugmentDraw& draw,
                                      const AugmentConfig& config = {});

/// Replaces exactly round(fraction * n) samples of each shard-sized block with
/// augmented copies.
void apply_augmentation(std::vector<TrainingSample>& samples, double fraction, std::size_t shard_size,
                        std::uint64_t seed, const AugmentConfig& config, CollectStats* stats = nullptr);

/// Throws InvariantError unless every box half-extent lies in [0.1, 10] m and
/// the label is finite.
void validate_sample(const TrainingSample& sample);

/// Fraction of samples containing at least one object of each class.
std::array<double, scene::kNumObjectClasses> class_balance(const std::vector<TrainingSample>& samples);

nlohmann::json label_to_json(const expert::PlanLabel& label);
expert::PlanLabel label_from_json(const nlohmann::json& j);
nlohmann::json sample_to_json(const TrainingSample& s);
TrainingSample sample_from_json(const nlohmann::json& j);

/// Writes shard_NNNNN.jsonl files and manifest.json into `dir`.
void write_shards(const std::vector<TrainingSample>& samples, const std::string& dir, std::size_t shard_size = 10000,
                  const nlohmann::json& extra = nullptr);
/// Verifies hashes and counts; IntegrityError names the offending shard.
std::vector<TrainingSample> read_shards(const std::string& dir);

}  // namespace plancraft::data

#endif  // PLANCRAFT_DATA_HPP_
