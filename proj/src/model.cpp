#include "plancraft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "plancraft/control.hpp"
#include "plancraft/errors.hpp"
#include "plancraft/hash.hpp"

namespace plancraft::model {

using nn::Graph;
using nn::Mat;
using nn::Var;

std::string_view to_string(Generator g) {
  switch (g) {
    case Generator::SingleTokenGRU: return "SingleTokenGRU";
    case Generator::MultiTokenGRU: return "MultiTokenGRU";
    case Generator::MultiTokenLinear: return "MultiTokenLinear";
  }
  return "?";
}

std::optional<Generator> generator_from_string(std::string_view s) {
  for (auto g : kAllGenerators) {
    if (to_string(g) == s) return g;
  }
  return std::nullopt;
}

std::vector<double> uniform_bins(int k, double lo, double hi) {
  std::vector<double> bins;
  for (int i = 0; i < k; ++i) bins.push_back(lo + (hi - lo) * i / (k - 1));
  return bins;
}

void validate(const ModelConfig& c) {
  if (c.d_model < 1 || c.layers < 1 || c.heads < 1 || c.ffn_mult < 1) {
    throw ConfigError("model: d_model, layers, heads and ffn_mult must be positive");
  }
  if (c.d_model % c.heads != 0) throw ConfigError("model.heads: must divide d_model");
  if (c.speed_bins.size() < 2) throw ConfigError("model.speed_bins: need at least 2 bins");
  for (std::size_t i = 1; i < c.speed_bins.size(); ++i) {
    if (!(c.speed_bins[i] > c.speed_bins[i - 1])) throw ConfigError("model.speed_bins: must be strictly ascending");
  }
  for (int ch : c.raster_channels) {
    if (ch < 1) throw ConfigError("model.raster_channels: must be positive");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"head", to_string(c.head)},
          {"generator", to_string(c.generator)},
          {"speed_bins", c.speed_bins},
          {"use_ego_speed", c.use_ego_speed},
          {"raster_channels", c.raster_channels},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "d_model") c.d_model = v.get<int>();
      else if (key == "layers") c.layers = v.get<int>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "ffn_mult") c.ffn_mult = v.get<int>();
      else if (key == "head") {
        const auto h = head_kind_from_string(v.get<std::string>());
        if (!h) throw ConfigError("model.head: expected WPS, PATH or P+WP");
        c.head = *h;
      } else if (key == "generator") {
        const auto g = generator_from_string(v.get<std::string>());
        if (!g) throw ConfigError("model.generator: unknown generator");
        c.generator = *g;
      } else if (key == "speed_bins") c.speed_bins = v.get<std::vector<double>>();
      else if (key == "use_ego_speed") c.use_ego_speed = v.get<bool>();
      else if (key == "raster_channels") c.raster_channels = v.get<std::array<int, 3>>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("model." + key + ": unknown key");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  validate(c);
  return c;
}

TwoHot two_hot_encode(double speed, const std::vector<double>& bins) {
  TwoHot t;
  t.weights.assign(bins.size(), 0.0);
  if (speed <= bins.front()) {
    t.weights.front() = 1.0;
    t.clamped = speed < bins.front();
    return t;
  }
  if (speed >= bins.back()) {
    t.weights.back() = 1.0;
    t.clamped = speed > bins.back();
    return t;
  }
  const auto k = static_cast<std::size_t>(std::upper_bound(bins.begin(), bins.end(), speed) - bins.begin()) - 1;
  const double alpha = (speed - bins[k]) / (bins[k + 1] - bins[k]);
  t.weights[k] = 1.0 - alpha;
  t.weights[k + 1] = alpha;
  return t;
}

double two_hot_decode(const std::vector<double>& probs, const std::vector<double>& bins) {
  if (probs.size() != bins.size()) throw InvariantError("speed_probs", "size does not match the bins");
  double v = 0.0;
  for (std::size_t k = 0; k < bins.size(); ++k) v += probs[k] * bins[k];
  return v;
}

EncodedScene encode_scene(const scene::Scene& input) {
  scene::Scene s = input;
  s.objects = scene::filter_by_range(input.objects);
  scene::validate_scene(s);
  EncodedScene e;
  for (const auto& b : s.objects) {
    e.classes.push_back(b.cls);
    e.objects.push_back({b.center_x / 32.0, b.center_y / 32.0, std::sin(b.yaw), std::cos(b.yaw), b.half_length / 4.0,
                         b.half_width / 4.0, b.speed / 10.0});
  }
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) {
    e.route[2 * i] = s.route.points[i].x / 10.0;
    e.route[2 * i + 1] = s.route.points[i].y / 10.0;
  }
  e.speed_limit_index = s.speed_limit_index;
  e.raster.assign(kPooledRaster * kPooledRaster * kRasterChannels, 0);
  for (int r = 0; r < scene::kRasterSize; ++r) {
    for (int c = 0; c < scene::kRasterSize; ++c) {
      const int cls = static_cast<int>(s.raster.at(r, c));
      ++e.raster[static_cast<std::size_t>(((r / 4) * kPooledRaster + c / 4) * kRasterChannels + cls)];
    }
  }
  e.target = s.route.points.back();
  e.ego_speed = s.ego_speed.value_or(0.0);
  return e;
}

Targets make_targets(const expert::PlanLabel& label, const ModelConfig& config) {
  if (label.path_points.size() != kPathPoints || label.waypoints.size() != kWaypoints) {
    throw InvariantError("label", "expected 20 path points and 8 waypoints");
  }
  Targets t;
  t.path.resize(kPathPoints, 2);
  for (std::size_t i = 0; i < kPathPoints; ++i) {
    t.path(static_cast<Eigen::Index>(i), 0) = label.path_points[i].x;
    t.path(static_cast<Eigen::Index>(i), 1) = label.path_points[i].y;
  }
  t.waypoints.resize(kWaypoints, 2);
  for (std::size_t i = 0; i < kWaypoints; ++i) {
    t.waypoints(static_cast<Eigen::Index>(i), 0) = label.waypoints[i].x;
    t.waypoints(static_cast<Eigen::Index>(i), 1) = label.waypoints[i].y;
  }
  const auto th = two_hot_encode(label.target_speed, config.speed_bins);
  t.speed = Eigen::Map<const Mat>(th.weights.data(), 1, static_cast<Eigen::Index>(th.weights.size()));
  return t;
}

namespace {

struct Group {
  std::string name;
  int points = 0;
  int slot = 0;  // first slot index
};

std::vector<Group> point_groups(const ModelConfig& c) {
  std::vector<Group> groups;
  const bool multi = c.generator != Generator::SingleTokenGRU;
  int slot = 0;
  if (has_path(c.head)) {
    groups.push_back({"path", static_cast<int>(kPathPoints), slot});
    slot += multi ? static_cast<int>(kPathPoints) : 1;
  }
  if (has_waypoints(c.head)) {
    groups.push_back({"wp", static_cast<int>(kWaypoints), slot});
    slot += multi ? static_cast<int>(kWaypoints) : 1;
  }
  return groups;
}

double xavier(int in, int out) { return std::sqrt(6.0 / (in + out)); }

Mat deltas_of(const Mat& points) {
  Mat d = points;
  for (Eigen::Index r = d.rows() - 1; r > 0; --r) d.row(r) -= points.row(r - 1);
  return d;
}

void check_finite(Var v, int layer, const char* where) {
  if (!v->value.allFinite()) throw NumericalFault(layer, std::string("non-finite activations in ") + where);
}

}  // namespace

PlannerModel::PlannerModel(ModelConfig config) : config_(std::move(config)) {
  validate(config_);
  std::mt19937_64 rng(config_.seed);
  const int d = config_.d_model;
  auto linear = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w", in, out, xavier(in, out), rng);
    params_.add(name + ".b", 1, out, 0.0, rng);
  };
  for (std::size_t c = 0; c < scene::kNumObjectClasses; ++c) {
    linear("obj." + std::string(scene::to_string(static_cast<scene::ObjectClass>(c))), kObjectFeatures, d);
  }
  linear("route", 2 * static_cast<int>(scene::kRoutePoints), d);
  params_.add("speed_limit.emb", 4, d, 0.1, rng);
  const auto& ch = config_.raster_channels;
  linear("raster.conv1", 9 * kRasterChannels, ch[0]);
  linear("raster.conv2", 9 * ch[0], ch[1]);
  linear("raster.conv3", 9 * ch[1], ch[2]);
  linear("raster.fc", 16 * ch[2], d);
  if (config_.use_ego_speed) linear("ego_speed", 1, d);
  params_.add("slots", slots(), d, 0.1, rng);
  const int f = d * config_.ffn_mult;
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    params_.add_constant(p + "ln1.g", 1, d, 1.0);
    params_.add_constant(p + "ln1.b", 1, d, 0.0);
    // Keys carry no bias: softmax is invariant to it.
    linear(p + "attn.q", d, d);
    params_.add(p + "attn.k.w", d, d, xavier(d, d), rng);
    linear(p + "attn.v", d, d);
    linear(p + "attn.o", d, d);
    params_.add_constant(p + "ln2.g", 1, d, 1.0);
    params_.add_constant(p + "ln2.b", 1, d, 0.0);
    linear(p + "ffn1", d, f);
    linear(p + "ffn2", f, d);
  }
  params_.add_constant("final_ln.g", 1, d, 1.0);
  params_.add_constant("final_ln.b", 1, d, 0.0);
  for (const auto& g : point_groups(config_)) {
    if (config_.generator == Generator::MultiTokenLinear) {
      linear("head." + g.name, d, 2);
      continue;
    }
    const std::string p = "gru." + g.name + ".";
    const int in = config_.generator == Generator::MultiTokenGRU ? d : 4;
    if (config_.generator == Generator::MultiTokenGRU) linear(p + "h0", 2, d);
    for (const char* gate : {"r", "z", "n"}) {
      linear(p + "i" + gate, in, d);
      linear(p + "h" + gate, d, d);
    }
    linear(p + "out", d, 2);
  }
  if (has_speed_classifier(config_.head)) linear("head.speed", d, static_cast<int>(config_.speed_bins.size()));
}

int PlannerModel::slots() const {
  const bool multi = config_.generator != Generator::SingleTokenGRU;
  int s = 0;
  if (has_path(config_.head)) s += multi ? static_cast<int>(kPathPoints) : 1;
  if (has_waypoints(config_.head)) s += multi ? static_cast<int>(kWaypoints) : 1;
  if (has_speed_classifier(config_.head)) s += 1;
  return s;
}

Var PlannerModel::embed(Graph& g, const std::vector<const EncodedScene*>& batch,
                        std::vector<nn::Segment>& segments) const {
  const int b_count = static_cast<int>(batch.size());
  const int fixed = fixed_tokens();
  const int s_count = slots();
  segments.clear();
  int rows = 0;
  for (const auto* e : batch) {
    const int len = fixed + s_count + static_cast<int>(e->objects.size());
    segments.push_back({rows, len});
    rows += len;
  }
  std::vector<std::pair<Var, std::vector<int>>> parts;

  Mat route(b_count, 2 * static_cast<int>(scene::kRoutePoints));
  std::vector<int> route_rows, speed_rows, raster_rows, ego_rows, speed_idx;
  for (int b = 0; b < b_count; ++b) {
    for (std::size_t i = 0; i < batch[b]->route.size(); ++i) route(b, static_cast<Eigen::Index>(i)) = batch[b]->route[i];
    route_rows.push_back(segments[b].start);
    speed_rows.push_back(segments[b].start + 1);
    raster_rows.push_back(segments[b].start + 2);
    ego_rows.push_back(segments[b].start + 3);
    speed_idx.push_back(batch[b]->speed_limit_index);
  }
  parts.push_back({g.linear(g.constant(std::move(route)), params_.at("route.w"), params_.at("route.b")), route_rows});
  parts.push_back({g.gather_rows(g.param(params_.at("speed_limit.emb")), speed_idx), speed_rows});

  Mat raster(b_count * kPooledRaster * kPooledRaster, kRasterChannels);
  for (int b = 0; b < b_count; ++b) {
    const auto& r = batch[b]->raster;
    for (int i = 0; i < kPooledRaster * kPooledRaster; ++i) {
      for (int c = 0; c < kRasterChannels; ++c) {
        raster(b * kPooledRaster * kPooledRaster + i, c) = r[static_cast<std::size_t>(i * kRasterChannels + c)] / 16.0;
      }
    }
  }
  Var x = g.constant(std::move(raster));
  int size = kPooledRaster;
  for (int layer = 1; layer <= 3; ++layer) {
    const auto plan = nn::make_conv_plan(b_count, size, size, 2);
    const std::string p = "raster.conv" + std::to_string(layer);
    x = g.gelu(g.linear(g.im2col(x, plan), params_.at(p + ".w"), params_.at(p + ".b")));
    size = plan.out_height;
  }
  x = g.reshape(x, b_count, static_cast<int>(x->value.size()) / b_count);
  parts.push_back({g.linear(x, params_.at("raster.fc.w"), params_.at("raster.fc.b")), raster_rows});

  if (config_.use_ego_speed) {
    Mat speed(b_count, 1);
    for (int b = 0; b < b_count; ++b) speed(b, 0) = batch[b]->ego_speed / 10.0;
    parts.push_back({g.linear(g.constant(std::move(speed)), params_.at("ego_speed.w"), params_.at("ego_speed.b")), ego_rows});
  }

  std::vector<int> slot_src, slot_rows;
  for (int b = 0; b < b_count; ++b) {
    for (int s = 0; s < s_count; ++s) {
      slot_src.push_back(s);
      slot_rows.push_back(segments[b].start + fixed + s);
    }
  }
  parts.push_back({g.gather_rows(g.param(params_.at("slots")), slot_src), slot_rows});

  for (std::size_t c = 0; c < scene::kNumObjectClasses; ++c) {
    std::vector<int> obj_rows;
    std::vector<std::array<double, kObjectFeatures>> feats;
    for (int b = 0; b < b_count; ++b) {
      for (std::size_t i = 0; i < batch[b]->objects.size(); ++i) {
        if (static_cast<std::size_t>(batch[b]->classes[i]) != c) continue;
        obj_rows.push_back(segments[b].start + fixed + s_count + static_cast<int>(i));
        feats.push_back(batch[b]->objects[i]);
      }
    }
    if (obj_rows.empty()) continue;
    Mat m(static_cast<Eigen::Index>(feats.size()), kObjectFeatures);
    for (std::size_t i = 0; i < feats.size(); ++i) {
      for (int k = 0; k < kObjectFeatures; ++k) m(static_cast<Eigen::Index>(i), k) = feats[i][static_cast<std::size_t>(k)];
    }
    const std::string p = "obj." + std::string(scene::to_string(static_cast<scene::ObjectClass>(c)));
    parts.push_back({g.linear(g.constant(std::move(m)), params_.at(p + ".w"), params_.at(p + ".b")), obj_rows});
  }
  return g.scatter_rows(parts, rows);
}

Var PlannerModel::gru_step(Graph& g, const std::string& p, Var x, Var h) const {
  auto lin = [&](Var in, const std::string& name) { return g.linear(in, params_.at(p + name + ".w"), params_.at(p + name + ".b")); };
  Var r = g.sigmoid(g.add(lin(x, "ir"), lin(h, "hr")));
  Var z = g.sigmoid(g.add(lin(x, "iz"), lin(h, "hz")));
  Var n = g.tanh(g.add(lin(x, "in"), g.mul(r, lin(h, "hn"))));
  return g.add(g.mul(g.one_minus(z), n), g.mul(z, h));
}

PlannerModel::Outputs PlannerModel::forward(Graph& g, const std::vector<const EncodedScene*>& batch) const {
  if (batch.empty()) throw InvariantError("batch", "empty batch");
  const int b_count = static_cast<int>(batch.size());
  std::vector<nn::Segment> segments;
  Var h = embed(g, batch, segments);
  check_finite(h, -1, "tokenizer");
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto lin = [&](Var in, const std::string& name) { return g.linear(in, params_.at(p + name + ".w"), params_.at(p + name + ".b")); };
    Var a = g.layer_norm(h, params_.at(p + "ln1.g"), params_.at(p + "ln1.b"));
    Var att = g.attention(lin(a, "attn.q"), g.matmul(a, g.param(params_.at(p + "attn.k.w"))), lin(a, "attn.v"),
                          segments, config_.heads);
    h = g.add(h, lin(att, "attn.o"));
    Var f = g.layer_norm(h, params_.at(p + "ln2.g"), params_.at(p + "ln2.b"));
    h = g.add(h, lin(g.gelu(lin(f, "ffn1")), "ffn2"));
    check_finite(h, l, "transformer");
  }
  h = g.layer_norm(h, params_.at("final_ln.g"), params_.at("final_ln.b"));

  const int s_count = slots();
  std::vector<int> slot_rows;
  for (int b = 0; b < b_count; ++b) {
    for (int s = 0; s < s_count; ++s) slot_rows.push_back(segments[b].start + fixed_tokens() + s);
  }
  Var slot_out = g.gather_rows(h, slot_rows);

  Outputs out;
  out.batch = b_count;
  Mat target(b_count, 2);
  for (int b = 0; b < b_count; ++b) {
    target(b, 0) = batch[b]->target.x / 20.0;
    target(b, 1) = batch[b]->target.y / 20.0;
  }
  for (const auto& grp : point_groups(config_)) {
    Var points = nullptr;
    Var deltas = nullptr;
    if (config_.generator == Generator::MultiTokenLinear) {
      std::vector<int> rows;
      for (int b = 0; b < b_count; ++b) {
        for (int t = 0; t < grp.points; ++t) rows.push_back(b * s_count + grp.slot + t);
      }
      deltas = g.linear(g.gather_rows(slot_out, rows), params_.at("head." + grp.name + ".w"),
                        params_.at("head." + grp.name + ".b"));
      points = g.prefix_sum(deltas, grp.points);
    } else {
      const std::string p = "gru." + grp.name + ".";
      Var state;
      Var x_all = nullptr;
      if (config_.generator == Generator::MultiTokenGRU) {
        std::vector<int> rows;
        for (int b = 0; b < b_count; ++b) {
          for (int t = 0; t < grp.points; ++t) rows.push_back(b * s_count + grp.slot + t);
        }
        x_all = g.gather_rows(slot_out, rows);
        state = g.tanh(g.linear(g.constant(target), params_.at(p + "h0.w"), params_.at(p + "h0.b")));
      } else {
        std::vector<int> rows;
        for (int b = 0; b < b_count; ++b) rows.push_back(b * s_count + grp.slot);
        state = g.gather_rows(slot_out, rows);
      }
      Var tgt = g.constant(target);
      Var prev = g.constant(Mat::Zero(b_count, 2));
      std::vector<std::pair<Var, std::vector<int>>> point_parts, delta_parts;
      for (int t = 0; t < grp.points; ++t) {
        Var x;
        if (x_all) {
          std::vector<int> rows;
          for (int b = 0; b < b_count; ++b) rows.push_back(b * grp.points + t);
          x = g.gather_rows(x_all, rows);
        } else {
          x = g.concat_cols(g.scale(prev, 1.0 / 20.0), tgt);
        }
        state = gru_step(g, p, x, state);
        Var d = g.linear(state, params_.at(p + "out.w"), params_.at(p + "out.b"));
        prev = g.add(prev, d);
        std::vector<int> rows;
        for (int b = 0; b < b_count; ++b) rows.push_back(b * grp.points + t);
        point_parts.push_back({prev, rows});
        delta_parts.push_back({d, rows});
      }
      points = g.scatter_rows(point_parts, b_count * grp.points);
      deltas = g.scatter_rows(delta_parts, b_count * grp.points);
    }
    check_finite(points, config_.layers, "decoder");
    if (grp.name == "path") {
      out.path = points;
      out.path_delta = deltas;
    } else {
      out.waypoints = points;
      out.waypoint_delta = deltas;
    }
  }
  if (has_speed_classifier(config_.head)) {
    std::vector<int> rows;
    for (int b = 0; b < b_count; ++b) rows.push_back(b * s_count + s_count - 1);
    out.speed_logits = g.linear(g.gather_rows(slot_out, rows), params_.at("head.speed.w"), params_.at("head.speed.b"));
    out.speed_probs = g.softmax_rows(out.speed_logits);
    check_finite(out.speed_probs, config_.layers, "decoder");
  }
  return out;
}

PlanOutput PlannerModel::decode(const Outputs& out, int index) const {
  PlanOutput plan;
  auto points = [&](Var v, std::size_t n) {
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(static_cast<std::size_t>(index) * n + i);
      pts.push_back({v->value(r, 0), v->value(r, 1)});
    }
    return pts;
  };
  if (out.path) plan.path_points = points(out.path, kPathPoints);
  if (out.waypoints) plan.waypoints = points(out.waypoints, kWaypoints);
  if (out.speed_probs) {
    const auto row = out.speed_probs->value.row(index);
    plan.speed_probs = std::vector<double>(row.data(), row.data() + row.size());
    plan.target_speed = two_hot_decode(*plan.speed_probs, config_.speed_bins);
  } else {
    plan.target_speed = control::target_speed_from_waypoints(*plan.waypoints);
  }
  return plan;
}

std::vector<PlanOutput> PlannerModel::infer_batch(const std::vector<const EncodedScene*>& batch) const {
  Graph g(false);
  const auto out = forward(g, batch);
  std::vector<PlanOutput> plans;
  for (int b = 0; b < out.batch; ++b) plans.push_back(decode(out, b));
  return plans;
}

PlanOutput PlannerModel::infer(const scene::Scene& scene) const {
  const auto e = encode_scene(scene);
  return infer_batch({&e}).front();
}

Mat PlannerModel::tokens(const EncodedScene& scene) const {
  Graph g(false);
  std::vector<nn::Segment> segments;
  return embed(g, {&scene}, segments)->value;
}

std::string PlannerModel::id() const {
  std::string bytes = to_json(config_).dump();
  for (const auto& name : params_.names()) {
    const auto& v = params_.at(name).value;
    bytes += name;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v.data()[i]);
      bytes.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  return sha256_hex(bytes).substr(0, 16);
}

LossParts loss(Graph& g, const PlannerModel& model, const PlannerModel::Outputs& out,
               const std::vector<const Targets*>& targets) {
  const auto& cfg = model.config();
  const int b_count = out.batch;
  if (static_cast<int>(targets.size()) != b_count) throw InvariantError("targets", "batch size mismatch");
  LossParts parts;
  std::vector<Var> terms;
  double abs_err = 0.0;
  double abs_count = 0.0;
  const bool deltas = cfg.generator == Generator::MultiTokenLinear;
  auto point_term = [&](Var points, Var point_deltas, std::size_t n, auto member) {
    Mat abs(b_count * static_cast<int>(n), 2);
    Mat del(b_count * static_cast<int>(n), 2);
    for (int b = 0; b < b_count; ++b) {
      const Mat& m = (*targets[static_cast<std::size_t>(b)]).*member;
      abs.middleRows(b * static_cast<int>(n), static_cast<int>(n)) = m;
      del.middleRows(b * static_cast<int>(n), static_cast<int>(n)) = deltas_of(m);
    }
    terms.push_back(deltas ? g.l1(point_deltas, del) : g.l1(points, abs));
    abs_err += (points->value - abs).cwiseAbs().sum();
    abs_count += static_cast<double>(abs.size());
  };
  if (out.path) point_term(out.path, out.path_delta, kPathPoints, &Targets::path);
  if (out.waypoints) point_term(out.waypoints, out.waypoint_delta, kWaypoints, &Targets::waypoints);
  if (out.speed_logits) {
    Mat t(b_count, static_cast<Eigen::Index>(cfg.speed_bins.size()));
    for (int b = 0; b < b_count; ++b) t.row(b) = targets[static_cast<std::size_t>(b)]->speed;
    Var ce = g.cross_entropy(out.speed_logits, t);
    parts.speed_ce = ce->value(0, 0);
    terms.push_back(ce);
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  parts.total = total;
  parts.point_l1 = abs_err / abs_count;
  if (!std::isfinite(total->value(0, 0))) throw NumericalFault(-1, "non-finite loss");
  return parts;
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw IntegrityError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::string get_bytes(const std::string& in, std::size_t& pos, std::size_t n) {
  if (pos + n > in.size()) throw IntegrityError("checkpoint: truncated");
  auto s = in.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace

void save_checkpoint(const PlannerModel& model, const std::string& path) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  const auto cfg = to_json(model.config()).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto& names = model.params().names();
  put_u32(out, static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    const auto& v = model.params().at(name).value;
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(v.rows()));
    put_u32(out, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v.data()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write " + path);
  file << out;
}

PlannerModel load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("cannot read " + path);
  std::ostringstream os;
  os << file.rdbuf();
  const std::string in = os.str();
  std::size_t pos = 0;
  if (get_bytes(in, pos, sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw IntegrityError("checkpoint: bad magic");
  const auto version = get_u32(in, pos);
  if (version != kCheckpointVersion) throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
  const auto cfg_len = get_u32(in, pos);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(get_bytes(in, pos, cfg_len)));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint: config: ") + e.what());
  }
  PlannerModel model(cfg);
  const auto count = get_u32(in, pos);
  if (count != model.params().names().size()) throw IntegrityError("checkpoint: parameter count mismatch");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = get_bytes(in, pos, get_u32(in, pos));
    if (!model.params().contains(name)) throw IntegrityError("checkpoint: unknown parameter " + name);
    auto& v = model.params().at(name).value;
    const auto rows = get_u32(in, pos);
    const auto cols = get_u32(in, pos);
    if (rows != v.rows() || cols != v.cols()) throw IntegrityError("checkpoint: shape mismatch for " + name);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const std::uint32_t bits = get_u32(in, pos);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      v.data()[i] = f;
    }
  }
  if (pos != in.size()) throw IntegrityError("checkpoint: trailing bytes");
  return model;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"final_lr_factor", c.final_lr_factor},
          {"seed", c.seed},
          {"divergence_threshold", c.divergence_threshold}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "final_lr_factor") c.final_lr_factor = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "divergence_threshold") c.divergence_threshold = v.get<double>();
      else throw ConfigError("train." + key + ": unknown key");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (c.epochs < 1 || c.batch_size < 1 || !(c.lr > 0.0)) throw ConfigError("train: epochs, batch_size and lr must be positive");
  return c;
}

EvalStats evaluate(const PlannerModel& model, const std::vector<EncodedSample>& samples, int batch_size) {
  EvalStats st;
  if (samples.empty()) return st;
  double disp = 0.0;
  double disp_count = 0.0;
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const EncodedScene*> scenes;
    std::vector<const Targets*> targets;
    for (std::size_t i = begin; i < end; ++i) {
      scenes.push_back(&samples[i].scene);
      targets.push_back(&samples[i].targets);
    }
    Graph g(false);
    const auto out = model.forward(g, scenes);
    const auto parts = loss(g, model, out, targets);
    const double n = static_cast<double>(end - begin);
    st.loss += parts.total->value(0, 0) * n;
    st.point_l1 += parts.point_l1 * n;
    const bool wps = out.waypoints != nullptr;
    const Var pts = wps ? out.waypoints : out.path;
    const std::size_t per = wps ? kWaypoints : kPathPoints;
    for (std::size_t b = 0; b < targets.size(); ++b) {
      const Mat& t = wps ? targets[b]->waypoints : targets[b]->path;
      for (std::size_t i = 0; i < per; ++i) {
        const auto r = static_cast<Eigen::Index>(b * per + i);
        disp += (pts->value.row(r) - t.row(static_cast<Eigen::Index>(i))).norm();
        disp_count += 1.0;
      }
    }
  }
  const double total = static_cast<double>(samples.size());
  st.loss /= total;
  st.point_l1 /= total;
  st.ade = disp / disp_count;
  return st;
}

std::vector<EpochStats> train(PlannerModel& model, const std::vector<EncodedSample>& train_set,
                              const std::vector<EncodedSample>& val_set, const TrainConfig& config,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  if (train_set.empty()) throw InvariantError("dataset", "empty training set");
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("train: epochs and batch_size must be positive");
  std::mt19937_64 rng(config.seed);
  nn::Adam adam;
  std::vector<std::size_t> order(train_set.size());
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.lr = epoch == config.epochs ? config.lr * config.final_lr_factor : config.lr;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<const EncodedScene*> scenes;
      std::vector<const Targets*> targets;
      for (std::size_t i = begin; i < end; ++i) {
        scenes.push_back(&train_set[order[i]].scene);
        targets.push_back(&train_set[order[i]].targets);
      }
      Graph g;
      const auto out = model.forward(g, scenes);
      const auto parts = loss(g, model, out, targets);
      const double value = parts.total->value(0, 0);
      if (!std::isfinite(value) || value > config.divergence_threshold) {
        throw NumericalFault(-1, "training diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(value) + ")");
      }
      model.params().zero_grad();
      g.backward(parts.total);
      adam.step(model.params(), {st.lr, 0.9, 0.999, 1e-8});
      const double n = static_cast<double>(end - begin);
      st.train_loss += value * n;
      st.train_point_l1 += parts.point_l1 * n;
    }
    st.train_loss /= static_cast<double>(order.size());
    st.train_point_l1 /= static_cast<double>(order.size());
    if (!val_set.empty()) st.val = evaluate(model, val_set, config.batch_size);
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

GradCheck gradient_check(PlannerModel& model, const std::vector<EncodedSample>& samples, double h) {
  std::vector<const EncodedScene*> scenes;
  std::vector<const Targets*> targets;
  for (const auto& s : samples) {
    scenes.push_back(&s.scene);
    targets.push_back(&s.targets);
  }
  auto eval = [&]() {
    Graph g(false);
    return loss(g, model, model.forward(g, scenes), targets).total->value(0, 0);
  };
  model.params().zero_grad();
  {
    Graph g;
    const auto parts = loss(g, model, model.forward(g, scenes), targets);
    g.backward(parts.total);
  }
  GradCheck gc;
  for (const auto& name : model.params().names()) {
    auto& p = model.params().at(name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      const double up = eval();
      p.value.data()[i] = orig - h;
      const double down = eval();
      p.value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      if (rel > gc.max_rel_error) {
        gc.max_rel_error = rel;
        gc.worst_param = name + "[" + std::to_string(i) + "]";
      }
      ++gc.checked;
    }
  }
  return gc;
}

}  // namespace plancraft::model
