#ifndef PLANCRAFT_MODEL_HPP_
#define PLANCRAFT_MODEL_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "plancraft/expert.hpp"
#include "plancraft/nn.hpp"
#include "plancraft/plan.hpp"
#include "plancraft/scene.hpp"

namespace plancraft::model {

enum class Generator { SingleTokenGRU, MultiTokenGRU, MultiTokenLinear };
inline constexpr std::array<Generator, 3> kAllGenerators = {Generator::SingleTokenGRU, Generator::MultiTokenGRU,
                                                            Generator::MultiTokenLinear};
inline constexpr std::array<HeadKind, 3> kAllHeads = {HeadKind::WPS, HeadKind::PATH, HeadKind::PathWaypoints};

std::string_view to_string(Generator g);
std::optional<Generator> generator_from_string(std::string_view s);

std::vector<double> uniform_bins(int k, double lo, double hi);

struct ModelConfig {
  int d_model = 256;
  int layers = 4;
  int heads = 8;
  int ffn_mult = 4;
  HeadKind head = HeadKind::PathWaypoints;
  Generator generator = Generator::MultiTokenLinear;
  std::vector<double> speed_bins = uniform_bins(8, 0.0, 20.0);
  /// Adds an ego-speed token. Off by default: the planner does not observe
  /// its own velocity.
  bool use_ego_speed = false;
  std::array<int, 3> raster_channels = {16, 32, 32};
  std::uint64_t seed = 0;
};

/// Throws ConfigError on inconsistent sizes or bins.
void validate(const ModelConfig& c);
nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TwoHot {
  std::vector<double> weights;
  bool clamped = false;
};
TwoHot two_hot_encode(double speed, const std::vector<double>& bins);
double two_hot_decode(const std::vector<double>& probs, const std::vector<double>& bins);

inline constexpr int kObjectFeatures = 7;
inline constexpr int kPooledRaster = 32;
inline constexpr int kRasterChannels = 4;

/// Tokenizer input for one scene.
struct EncodedScene {
  std::vector<scene::ObjectClass> classes;
  std::vector<std::array<double, kObjectFeatures>> objects;
  std::array<double, 2 * scene::kRoutePoints> route{};
  int speed_limit_index = 0;
  /// 4x4 block counts per raster class, (row, col, class) order.
  std::vector<std::uint8_t> raster;
  Vec2 target;
  double ego_speed = 0.0;
};

/// Applies the range filter, then validates the remaining scene.
EncodedScene encode_scene(const scene::Scene& scene);

struct Targets {
  nn::Mat path;       // 20 x 2
  nn::Mat waypoints;  // 8 x 2
  nn::Mat speed;      // 1 x K two-hot
};
Targets make_targets(const expert::PlanLabel& label, const ModelConfig& config);

struct EncodedSample {
  EncodedScene scene;
  Targets targets;
};

class PlannerModel {
 public:
  explicit PlannerModel(ModelConfig config);

  struct Outputs {
    int batch = 0;
    nn::Var path = nullptr;  // batch*20 x 2, absolute
    nn::Var path_delta = nullptr;
    nn::Var waypoints = nullptr;  // batch*8 x 2, absolute
    nn::Var waypoint_delta = nullptr;
    nn::Var speed_logits = nullptr;  // batch x K
    nn::Var speed_probs = nullptr;
  };

  /// Throws NumericalFault naming the layer when activations go non-finite.
  Outputs forward(nn::Graph& g, const std::vector<const EncodedScene*>& batch) const;
  PlanOutput decode(const Outputs& out, int index) const;
  PlanOutput infer(const scene::Scene& scene) const;
  std::vector<PlanOutput> infer_batch(const std::vector<const EncodedScene*>& batch) const;

  /// Number of output-slot tokens.
  int slots() const;
  /// Sequence layout: route, speed limit, raster, [ego speed], slots, objects.
  int fixed_tokens() const { return config_.use_ego_speed ? 4 : 3; }

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  /// Hex digest of the configuration and parameter values.
  std::string id() const;

  /// Tokens as fed to the first layer, for tokenizer tests.
  nn::Mat tokens(const EncodedScene& scene) const;

 private:
  nn::Var embed(nn::Graph& g, const std::vector<const EncodedScene*>& batch, std::vector<nn::Segment>& segments) const;
  nn::Var gru_step(nn::Graph& g, const std::string& prefix, nn::Var x, nn::Var h) const;

  ModelConfig config_;
  nn::ParamStore params_;
};

struct LossParts {
  nn::Var total = nullptr;
  /// Mean absolute error of absolute point positions (m).
  double point_l1 = 0.0;
  double speed_ce = 0.0;
};

LossParts loss(nn::Graph& g, const PlannerModel& model, const PlannerModel::Outputs& out,
               const std::vector<const Targets*>& targets);

void save_checkpoint(const PlannerModel& model, const std::string& path);
PlannerModel load_checkpoint(const std::string& path);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double lr = 1e-4;
  /// Learning-rate factor of the final epoch.
  double final_lr_factor = 0.1;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e3;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EvalStats {
  double loss = 0.0;
  double point_l1 = 0.0;
  /// Mean displacement of waypoints (or path points for PATH heads).
  double ade = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_point_l1 = 0.0;
  std::optional<EvalStats> val;
};

EvalStats evaluate(const PlannerModel& model, const std::vector<EncodedSample>& samples, int batch_size = 128);

/// Adam training with a reduced rate in the last epoch. Deterministic in the
/// seeds of the model and the config. Throws NumericalFault on divergence.
std::vector<EpochStats> train(PlannerModel& model, const std::vector<EncodedSample>& train_set,
                              const std::vector<EncodedSample>& val_set, const TrainConfig& config,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

/// Max relative error between analytic and central-difference gradients over
/// every parameter entry, with the denominator floored at 1e-8.
struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};
GradCheck gradient_check(PlannerModel& model, const std::vector<EncodedSample>& samples, double h = 1e-5);

}  // namespace plancraft::model

#endif  // PLANCRAFT_MODEL_HPP_
