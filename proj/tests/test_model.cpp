#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "plancraft/errors.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/model.hpp"
#include "plancraft/scenarios.hpp"
#include "plancraft/world.hpp"

using namespace plancraft;
using namespace plancraft::model;
using nn::Graph;
using nn::Mat;

namespace {

ModelConfig tiny(HeadKind head = HeadKind::PathWaypoints, Generator gen = Generator::MultiTokenLinear) {
  ModelConfig c;
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.raster_channels = {4, 4, 4};
  c.head = head;
  c.generator = gen;
  return c;
}

struct Example {
  scene::Scene scene;
  expert::PlanLabel label;
};

Example example(sim::ScenarioKind kind = sim::ScenarioKind::ParkingCutIn, std::uint64_t seed = 0) {
  auto w = sim::build_world(sim::default_scenario(kind), seed);
  return {sim::make_scene(w), expert::expert_plan(w)};
}

std::vector<EncodedSample> samples(const ModelConfig& cfg, int n) {
  std::vector<EncodedSample> out;
  for (int i = 0; i < n; ++i) {
    const auto kind = sim::kAllScenarioKinds[static_cast<std::size_t>(i) % sim::kAllScenarioKinds.size()];
    auto e = example(kind, static_cast<std::uint64_t>(i));
    out.push_back({encode_scene(e.scene), make_targets(e.label, cfg)});
  }
  return out;
}

Mat run(const PlannerModel& m, const EncodedScene& e, bool deltas = false) {
  Graph g(false);
  const auto out = m.forward(g, {&e});
  const auto* v = deltas ? (out.path_delta ? out.path_delta : out.waypoint_delta) : (out.path ? out.path : out.waypoints);
  return v->value;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("two-hot examples and round trip") {
  std::vector<double> bins;
  for (int k = 0; k <= 10; ++k) bins.push_back(2.0 * k);
  const auto mid = two_hot_encode(3.0, bins);
  CHECK(mid.weights[1] == doctest::Approx(0.5));
  CHECK(mid.weights[2] == doctest::Approx(0.5));
  CHECK_FALSE(mid.clamped);

  const auto def = uniform_bins(8, 0.0, 20.0);
  const auto over = two_hot_encode(25.0, def);
  CHECK(over.clamped);
  CHECK(over.weights.back() == 1.0);
  CHECK(two_hot_decode(over.weights, def) == 20.0);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(std::abs(two_hot_decode(two_hot_encode(v, def).weights, def) - v) < 1e-9);
  }
  CHECK_THROWS_AS(two_hot_decode({0.5, 0.5}, def), InvariantError);
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.heads = 3;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ModelConfig{};
  c.speed_bins = {0.0, 5.0, 5.0};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny(HeadKind::PATH, Generator::MultiTokenGRU);
  const auto back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(model_config_from_json({{"width", 3}}), ConfigError);
}

TEST_CASE("prefix sum decoding") {
  Graph g(false);
  Mat d(3, 2);
  d << 1, 0, 1, 0.5, 0.5, 0.5;
  const Mat p = g.prefix_sum(g.constant(d), 3)->value;
  Mat want(3, 2);
  want << 1, 0, 2, 0.5, 2.5, 1.0;
  CHECK(p == want);
  CHECK(g.prefix_sum(g.constant(Mat::Zero(8, 2)), 8)->value == Mat::Zero(8, 2));

  PlannerModel m(tiny());
  const auto e = encode_scene(example().scene);
  Graph g2(false);
  const auto out = m.forward(g2, {&e});
  const Mat& wd = out.waypoint_delta->value;
  Mat acc = Mat::Zero(1, 2);
  for (Eigen::Index i = 0; i < wd.rows(); ++i) {
    acc += wd.row(i);
    CHECK(out.waypoints->value.row(i) == acc);
  }
}

TEST_CASE("single-token GRU unrolls by hand") {
  auto cfg = tiny(HeadKind::WPS, Generator::SingleTokenGRU);
  PlannerModel m(cfg);
  for (const auto& name : m.params().names()) {
    if (name.rfind("gru.", 0) == 0 && name.rfind("gru.wp.out", 0) != 0) m.params().at(name).value.setZero();
  }
  const auto e = encode_scene(example().scene);

  SUBCASE("constant step output gives an arithmetic progression") {
    m.params().at("gru.wp.out.w").value.setZero();
    m.params().at("gru.wp.out.b").value << 0.75, -0.25;
    const Mat p = run(m, e);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      CHECK(p(i, 0) == doctest::Approx(0.75 * (i + 1)).epsilon(1e-12));
      CHECK(p(i, 1) == doctest::Approx(-0.25 * (i + 1)).epsilon(1e-12));
    }
  }
  SUBCASE("zero gates halve the state each step") {
    Graph g(false);
    const auto out = m.forward(g, {&e});
    // With r = z = 0.5 and n = 0 the state decays as h_t = h0 / 2^t.
    const Mat& b = m.params().at("gru.wp.out.b").value;
    const Mat d0 = out.waypoint_delta->value.row(0) - b;
    for (Eigen::Index t = 1; t < 8; ++t) {
      const Mat dt = out.waypoint_delta->value.row(t) - b;
      CHECK((dt - d0 * std::pow(0.5, static_cast<double>(t))).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("tokenizer layout") {
  PlannerModel m(tiny());
  auto ex = example();
  auto s = ex.scene;
  s.objects.clear();
  CHECK(m.tokens(encode_scene(s)).rows() == 3 + m.slots());
  CHECK(m.slots() == 28);
  CHECK(PlannerModel(tiny(HeadKind::PATH, Generator::SingleTokenGRU)).slots() == 2);
  CHECK(PlannerModel(tiny(HeadKind::PATH)).slots() == 21);

  scene::OrientedBox a{10.0, 0.0, 0.0, 2.4, 0.95, 5.0, scene::ObjectClass::Vehicle};
  auto b = a;
  b.cls = scene::ObjectClass::EmergencyVehicle;
  s.objects = {a, b};
  const Mat t = m.tokens(encode_scene(s));
  const int first = m.fixed_tokens() + m.slots();
  CHECK(t.row(first) != t.row(first + 1));
  CHECK(t.cols() == 16);

  auto p = ex.scene;
  REQUIRE(p.objects.size() >= 2);
  const Mat before = m.tokens(encode_scene(p));
  std::reverse(p.objects.begin(), p.objects.end());
  const Mat after = m.tokens(encode_scene(p));
  const auto n = static_cast<Eigen::Index>(p.objects.size());
  CHECK(before.topRows(first) == after.topRows(first));
  for (Eigen::Index i = 0; i < n; ++i) CHECK(before.row(first + i) == after.row(first + n - 1 - i));
}

TEST_CASE("presence pattern and determinism") {
  const auto ex = example();
  for (auto head : kAllHeads) {
    for (auto gen : kAllGenerators) {
      auto cfg = tiny(head, gen);
      cfg.seed = 3;
      const PlannerModel a(cfg), b(cfg);
      const auto pa = a.infer(ex.scene);
      const auto pb = b.infer(ex.scene);
      CHECK(pa.path_points.has_value() == has_path(head));
      CHECK(pa.waypoints.has_value() == has_waypoints(head));
      CHECK(pa.speed_probs.has_value() == has_speed_classifier(head));
      CHECK_NOTHROW(check_presence(pa, head));
      CHECK(pa.path_points == pb.path_points);
      CHECK(pa.waypoints == pb.waypoints);
      CHECK(pa.target_speed == pb.target_speed);
      CHECK(a.id() == b.id());
    }
  }
  auto other = tiny();
  other.seed = 4;
  CHECK(PlannerModel(other).id() != PlannerModel(tiny()).id());
}

TEST_CASE("speed probabilities stay normalized") {
  PlannerModel m(tiny(HeadKind::PATH));
  for (auto kind : sim::kAllScenarioKinds) {
    const auto p = m.infer(example(kind, 1).scene);
    double sum = 0.0;
    for (double q : *p.speed_probs) {
      CHECK(q >= 0.0);
      sum += q;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("doubling the final linear layer doubles the deltas") {
  PlannerModel m(tiny());
  const auto e = encode_scene(example().scene);
  const Mat before = run(m, e, true);
  for (const char* n : {"head.path.w", "head.path.b", "head.wp.w", "head.wp.b"}) m.params().at(n).value *= 2.0;
  CHECK(run(m, e, true) == 2.0 * before);
}

TEST_CASE("loss closed forms") {
  Graph g(false);
  Mat t = Mat::Zero(1, 8);
  t(0, 2) = 0.5;
  t(0, 3) = 0.5;
  CHECK(g.cross_entropy(g.constant(Mat::Zero(1, 8)), t)->value(0, 0) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  Mat pred = Mat::Zero(8, 2);
  Mat target = Mat::Zero(8, 2);
  pred(3, 0) = 0.4;
  const double one = g.l1(g.constant(pred), target)->value(0, 0);
  pred(3, 0) = 0.8;
  CHECK(g.l1(g.constant(pred), target)->value(0, 0) == doctest::Approx(2.0 * one).epsilon(1e-12));

  PlannerModel m(tiny());
  const auto ex = example();
  const auto e = encode_scene(ex.scene);
  Targets perfect = make_targets(ex.label, m.config());
  Graph g2(false);
  const auto out = m.forward(g2, {&e});
  perfect.path = out.path->value;
  perfect.waypoints = out.waypoints->value;
  CHECK(loss(g2, m, out, {&perfect}).point_l1 < 1e-12);
}

TEST_CASE("object permutation leaves the plan unchanged") {
  std::mt19937 rng(11);
  for (auto gen : kAllGenerators) {
    PlannerModel m(tiny(HeadKind::PathWaypoints, gen));
    auto s = example(sim::ScenarioKind::ConstructionObstacleTwoWays, 2).scene;
    REQUIRE(s.objects.size() >= 3);
    const auto e = encode_scene(s);
    const Mat base = run(m, e);
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(s.objects.begin(), s.objects.end(), rng);
      CHECK((run(m, encode_scene(s)) - base).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("objects outside the range region never reach the model") {
  PlannerModel m(tiny(HeadKind::PATH));
  auto s = example().scene;
  const auto before = m.infer(s);
  s.objects.push_back({150.0, 0.0, 0.0, 2.4, 0.95, 5.0, scene::ObjectClass::Vehicle});
  s.objects.push_back({-60.0, 10.0, 1.0, 2.4, 0.95, 5.0, scene::ObjectClass::Pedestrian});
  const auto after = m.infer(s);
  CHECK(before.path_points == after.path_points);
  CHECK(before.speed_probs == after.speed_probs);
}

TEST_CASE("non-finite activations name the layer") {
  const auto e = encode_scene(example().scene);
  auto cfg = tiny();
  cfg.layers = 2;
  PlannerModel m(cfg);
  m.params().at("layer1.ffn1.w").value(0, 0) = std::nan("");
  Graph g(false);
  try {
    m.forward(g, {&e});
    FAIL("expected a fault");
  } catch (const NumericalFault& f) {
    CHECK(f.layer() == 1);
  }
  PlannerModel t(cfg);
  t.params().at("route.w").value(0, 0) = INFINITY;
  try {
    Graph g2(false);
    t.forward(g2, {&e});
    FAIL("expected a fault");
  } catch (const NumericalFault& f) {
    CHECK(f.layer() == -1);
  }
}

TEST_CASE("checkpoint round trip and training determinism") {
  const auto dir = std::filesystem::temp_directory_path() / "plancraft_test_model";
  std::filesystem::create_directories(dir);
  const auto cfg = tiny();
  const auto data = samples(cfg, 12);
  const std::vector<EncodedSample> train_set(data.begin(), data.begin() + 9);
  const std::vector<EncodedSample> val(data.begin() + 9, data.end());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.lr = 1e-3;

  PlannerModel a(cfg);
  const auto hist = train(a, train_set, val, tc);
  REQUIRE(hist.size() == 3);
  CHECK(hist[0].lr == 1e-3);
  CHECK(hist[2].lr == doctest::Approx(1e-4).epsilon(1e-15));
  save_checkpoint(a, (dir / "a.ckpt").string());
  const auto loaded = load_checkpoint((dir / "a.ckpt").string());
  CHECK(evaluate(loaded, val).loss == hist.back().val->loss);
  CHECK(loaded.id() == a.id());

  PlannerModel b(cfg);
  train(b, train_set, val, tc);
  save_checkpoint(b, (dir / "b.ckpt").string());
  CHECK(slurp((dir / "a.ckpt").string()) == slurp((dir / "b.ckpt").string()));

  auto bytes = slurp((dir / "a.ckpt").string());
  std::ofstream((dir / "cut.ckpt").string(), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint((dir / "cut.ckpt").string()), IntegrityError);
  bytes[0] = 'X';
  std::ofstream((dir / "magic.ckpt").string(), std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string()), IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("paper schedule: the last of 30 epochs runs at 1e-5") {
  const auto cfg = tiny();
  const auto data = samples(cfg, 2);
  PlannerModel m(cfg);
  TrainConfig tc;
  const auto hist = train(m, data, {}, tc);
  REQUIRE(hist.size() == 30);
  CHECK(hist[28].lr == 1e-4);
  CHECK(hist[29].lr == doctest::Approx(1e-5).epsilon(1e-15));
}

TEST_CASE("divergence aborts training") {
  const auto cfg = tiny();
  const auto data = samples(cfg, 2);
  PlannerModel m(cfg);
  TrainConfig tc;
  tc.epochs = 1;
  tc.divergence_threshold = 1e-6;
  CHECK_THROWS_AS(train(m, data, {}, tc), NumericalFault);
}

TEST_CASE("analytic gradients match finite differences for every decoder") {
  auto ex = example();
  ex.scene.objects.resize(3);
  for (auto gen : kAllGenerators) {
    for (auto head : kAllHeads) {
      const auto cfg = tiny(head, gen);
      PlannerModel m(cfg);
      const std::vector<EncodedSample> s{{encode_scene(ex.scene), make_targets(ex.label, cfg)}};
      const auto gc = gradient_check(m, s);
      INFO(to_string(gen) << " " << to_string(head) << " worst " << gc.worst_param);
      CHECK(gc.checked == m.params().size());
      CHECK(gc.max_rel_error < 1e-3);
    }
  }
}
