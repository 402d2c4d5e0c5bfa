#ifndef PLANCRAFT_RUN_HPP_
#define PLANCRAFT_RUN_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/data.hpp"
#include "plancraft/episode.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/metrics.hpp"
#include "plancraft/model.hpp"
#include "plancraft/scenarios.hpp"

namespace plancraft::run {

inline constexpr int kRunConfigVersion = 1;

struct CollectSettings {
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::uint64_t> val_seeds;
  double augment_fraction = 0.3;
  data::AugmentConfig augment;
  expert::ExpertConfig expert;
  std::size_t shard_size = 10000;
};

struct EvalSettings {
  std::vector<std::uint64_t> seeds;
  sim::EpisodeConfig episode;
  metrics::PenaltyTable penalties;
};

struct AblateSettings {
  std::vector<std::uint64_t> train_seeds = {0, 1, 2};
  std::vector<std::uint64_t> eval_seeds = {1000, 1001, 1002};
  int epochs = 10;
  /// Every n-th training sample is kept.
  int sample_stride = 4;
};

/// One document for every command. Unknown keys raise ConfigError.
struct RunConfig {
  int version = kRunConfigVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  /// Template names; empty means all built-in templates. Files in
  /// `scenario_dir`, when set, replace the built-ins.
  std::vector<std::string> scenarios;
  std::string scenario_dir;
  CollectSettings collect;
  model::ModelConfig model;
  model::TrainConfig train;
  EvalSettings eval;
  AblateSettings ablate;
};

/// Desk-scale defaults.
RunConfig default_run_config();
/// Paper hyperparameters for training (full backbone, 30 epochs, batch 128, 1e-4).
RunConfig paper_scale(RunConfig config);

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep the desk defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

std::vector<sim::ScenarioDef> templates(const RunConfig& c);

data::CollectConfig collect_config(const RunConfig& c, const std::vector<std::uint64_t>& seeds, bool augment);

std::vector<model::EncodedSample> encode(const std::vector<data::TrainingSample>& samples, const model::ModelConfig& cfg,
                                         int stride = 1);

/// Closed-loop planner backed by a frozen model.
sim::PlannerFn model_planner(const model::PlannerModel& model);

struct EpisodeResult {
  std::string scenario;
  std::uint64_t seed = 0;
  metrics::RouteResult result;
  std::string termination;
};

struct ClosedLoop {
  std::vector<EpisodeResult> episodes;
  double success_rate = 0.0;
  metrics::Summary ds;
  metrics::Summary nds;
  metrics::Summary rc;
};

/// Every template under every seed, episodes run in parallel, results in
/// (template, seed) order.
ClosedLoop evaluate_closed_loop(const sim::PlannerFn& planner, const std::vector<sim::ScenarioDef>& defs,
                                const std::vector<std::uint64_t>& seeds, const EvalSettings& settings);
nlohmann::json to_json(const ClosedLoop& r);

struct AblationCell {
  HeadKind head = HeadKind::PathWaypoints;
  model::Generator generator = model::Generator::MultiTokenLinear;
  /// Per training seed, then evaluation seed.
  std::vector<std::vector<ClosedLoop>> runs;
  std::vector<double> val_ade;
  std::vector<std::string> errors;
};

struct AblationTable {
  std::vector<AblationCell> cells;
};

using Progress = std::function<void(const std::string&)>;

/// 3 representations x 3 generators, each trained once per training seed and
/// evaluated once per evaluation seed on every template. A failing run is
/// recorded in its cell; the table is emitted regardless.
AblationTable ablate(const RunConfig& config, const std::vector<data::TrainingSample>& train_set,
                     const std::vector<data::TrainingSample>& val_set, const Progress& progress = {});
nlohmann::json to_json(const AblationTable& t);
/// Markdown: NDS, DS, RC and per-kind infraction rates as mean +- std over
/// the training seeds.
std::string to_markdown(const AblationTable& t);

}  // namespace plancraft::run

#endif  // PLANCRAFT_RUN_HPP_
