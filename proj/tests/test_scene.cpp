#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "plancraft/errors.hpp"
#include "plancraft/road_map.hpp"
#include "plancraft/scene.hpp"
#include "plancraft/scene_json.hpp"

using namespace plancraft;
using scene::ObjectClass;
using scene::OrientedBox;

namespace {

OrientedBox box_at(double x, double y, double yaw = 0.0, double hl = 0.5, double hw = 0.5) {
  OrientedBox b;
  b.center_x = x;
  b.center_y = y;
  b.yaw = yaw;
  b.half_length = hl;
  b.half_width = hw;
  return b;
}

// Region membership by polar radius, independent of the implementation's
// algebraic form.
bool region_oracle(double x, double y) {
  const double r = std::hypot(x, y);
  if (x < 0.0) return r <= 50.0;
  if (r == 0.0) return true;
  const double c = x / r, s = y / r;
  const double boundary = 1.0 / std::sqrt(c * c / (100.0 * 100.0) + s * s / (50.0 * 50.0));
  return r <= boundary;
}

bool point_in_box(const Vec2& p, const OrientedBox& b) {
  const Vec2 local = point_to_ego_frame(p, b.pose());
  return std::abs(local.x) <= b.half_length && std::abs(local.y) <= b.half_width;
}

// Dense sampling of box a (n x n grid); true if any sample lies in b.
bool sampled_overlap(const OrientedBox& a, const OrientedBox& b, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Vec2 local{-a.half_length + 2.0 * a.half_length * i / (n - 1),
                       -a.half_width + 2.0 * a.half_width * j / (n - 1)};
      if (point_in_box(point_from_ego_frame(local, a.pose()), b)) return true;
    }
  }
  return false;
}

sim::RoadMap straight_two_lane_map(double y_center) {
  sim::RoadMap map;
  sim::Lane right;
  right.centerline = Polyline({{-100.0, y_center - 1.75}, {100.0, y_center - 1.75}});
  right.width = 3.5;
  right.left_marking = sim::Marking::Broken;
  right.left_neighbor = 1;
  sim::Lane left;
  left.centerline = Polyline({{100.0, y_center + 1.75}, {-100.0, y_center + 1.75}});
  left.width = 3.5;
  left.forward = true;
  left.left_neighbor = 0;
  map.lanes = {right, left};
  return map;
}

}  // namespace

TEST_CASE("filter_by_range examples") {
  CHECK(scene::filter_by_range({box_at(60, 0)}).size() == 1);
  CHECK(scene::filter_by_range({box_at(-60, 0)}).empty());
  CHECK(scene::filter_by_range({box_at(0, 60)}).empty());
  CHECK(scene::filter_by_range({}).empty());
  // x = 0 belongs to the front branch: the ellipse and the disc agree at |y| <= 50.
  CHECK(scene::in_range(0.0, 50.0));
  CHECK_FALSE(scene::in_range(0.0, 50.0001));
}

TEST_CASE("filter_by_range agrees with region oracle and is idempotent") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(-120.0, 120.0), uy(-80.0, 80.0);
  std::vector<OrientedBox> boxes;
  for (int i = 0; i < 20000; ++i) boxes.push_back(box_at(ux(rng), uy(rng)));
  const auto kept = scene::filter_by_range(boxes);
  std::size_t k = 0;
  int disagreements = 0;
  for (const auto& b : boxes) {
    const bool expect = region_oracle(b.center_x, b.center_y);
    const bool got = k < kept.size() && kept[k] == b;
    if (got) ++k;
    if (expect != got) ++disagreements;
  }
  CHECK(disagreements == 0);
  CHECK(scene::filter_by_range(kept) == kept);
}

TEST_CASE("to_ego_frame examples") {
  const Pose a = to_ego_frame({5, 0, 0}, {5, 0, 0});
  CHECK(a.x == doctest::Approx(0.0));
  CHECK(a.y == doctest::Approx(0.0));
  CHECK(a.yaw == doctest::Approx(0.0));

  const Pose b = to_ego_frame({1, 1, 0}, {0, 0, std::numbers::pi / 2});
  CHECK(b.x == doctest::Approx(1.0));
  CHECK(b.y == doctest::Approx(-1.0));
  CHECK(b.yaw == doctest::Approx(-std::numbers::pi / 2));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-200.0, 200.0), ua(-std::numbers::pi, std::numbers::pi);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose g{u(rng), u(rng), ua(rng)};
    const Pose e{u(rng), u(rng), ua(rng)};
    const Pose back = from_ego_frame(to_ego_frame(g, e), e);
    worst = std::max({worst, std::abs(back.x - g.x), std::abs(back.y - g.y),
                      std::abs(normalize_angle(back.yaw - g.yaw))});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("normalize_angle maps into (-pi, pi]") {
  CHECK(normalize_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(normalize_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(normalize_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("box_overlap examples and symmetry") {
  CHECK(scene::box_overlap(box_at(0, 0), box_at(0, 0)));
  CHECK_FALSE(scene::box_overlap(box_at(0, 0), box_at(3, 0)));
  const auto a = box_at(0, 0, 0.0);
  const auto b = box_at(1.05, 1.05, std::numbers::pi / 4);
  const bool oracle = sampled_overlap(a, b, 100) || sampled_overlap(b, a, 100);
  CHECK(scene::box_overlap(a, b) == oracle);
  CHECK(scene::box_overlap(b, a) == scene::box_overlap(a, b));
}

TEST_CASE("box_overlap agrees with dense sampling on random pairs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> up(-3.0, 3.0), ua(-std::numbers::pi, std::numbers::pi), us(0.2, 2.0);
  constexpr int kSamples = 100;  // 10^4 samples per box
  int hard_disagreements = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = box_at(up(rng), up(rng), ua(rng), us(rng), us(rng));
    const auto b = box_at(up(rng), up(rng), ua(rng), us(rng), us(rng));
    const bool sat = scene::box_overlap(a, b);
    CHECK(sat == scene::box_overlap(b, a));
    const bool sampled = sampled_overlap(a, b, kSamples) || sampled_overlap(b, a, kSamples);
    if (sampled && !sat) ++hard_disagreements;
    if (sat && !sampled) {
      // Sampling can miss slivers thinner than one sample spacing.
      const double spacing = 2.0 * std::max({a.half_length, a.half_width, b.half_length, b.half_width}) / (kSamples - 1);
      CHECK(scene::box_signed_distance(a, b) > -2.0 * spacing);
    }
  }
  CHECK(hard_disagreements == 0);
}

TEST_CASE("box_signed_distance") {
  CHECK(scene::box_signed_distance(box_at(0, 0), box_at(3, 0)) == doctest::Approx(2.0));
  CHECK(scene::box_signed_distance(box_at(0, 0), box_at(0.8, 0)) == doctest::Approx(-0.2));
  const auto a = box_at(0, 0);
  const auto b = box_at(1.05, 1.05, std::numbers::pi / 4);
  CHECK(scene::box_signed_distance(a, b) == doctest::Approx((2.1 - std::sqrt(0.5) - 1.0) / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("render_road_raster: empty map is all background") {
  const auto r = scene::render_road_raster(sim::RoadMap{}, {0, 0, 0});
  for (auto c : r.cells) CHECK(c == 0);
}

TEST_CASE("render_road_raster: straight two-lane road") {
  const auto map = straight_two_lane_map(0.0);
  const auto r = scene::render_road_raster(map, {0, 0, 0});
  int marking_rows = 0;
  for (int row = 0; row < scene::kRasterSize; ++row) {
    int road = 0, first = -1, last = -1, marking_col = -1, markings = 0;
    for (int col = 0; col < scene::kRasterSize; ++col) {
      const auto c = r.at(row, col);
      CHECK(c != scene::RasterClass::SolidMarking);
      if (c != scene::RasterClass::Background) {
        ++road;
        if (first < 0) first = col;
        last = col;
      }
      if (c == scene::RasterClass::BrokenMarking) {
        ++markings;
        marking_col = col;
      }
    }
    CHECK(road == 14);
    CHECK(last - first == 13);
    CHECK(first == 57);
    if (markings > 0) {
      CHECK(markings == 1);
      CHECK(marking_col == 64);
      ++marking_rows;
    }
  }
  // 3 m dashes with 3 m gaps: about half the rows carry a dash.
  CHECK(marking_rows > 50);
  CHECK(marking_rows < 78);
}

TEST_CASE("render_road_raster: 0.5 m ego translation shifts one row") {
  const auto map = straight_two_lane_map(0.0);
  const auto r0 = scene::render_road_raster(map, {0, 0, 0});
  const auto r1 = scene::render_road_raster(map, {0.5, 0, 0});
  for (int row = 1; row < scene::kRasterSize; ++row) {
    for (int col = 0; col < scene::kRasterSize; ++col) CHECK(r1.at(row, col) == r0.at(row - 1, col));
  }
  // lateral equivariance on a road with distinctive content
  const auto map2 = straight_two_lane_map(3.0);
  const auto a = scene::render_road_raster(map2, {0, 0, 0});
  const auto b = scene::render_road_raster(map2, {0, 1.0, 0});
  for (int row = 0; row < scene::kRasterSize; ++row) {
    for (int col = 2; col < scene::kRasterSize; ++col) CHECK(b.at(row, col) == a.at(row, col - 2));
  }
  CHECK(scene::render_road_raster(map, {0, 0, 0}) == r0);
}

TEST_CASE("resample_raster identity and shift") {
  const auto map = straight_two_lane_map(0.0);
  const auto r0 = scene::render_road_raster(map, {0, 0, 0});
  CHECK(scene::resample_raster(r0, {0, 0, 0}) == r0);
  const auto shifted = scene::resample_raster(r0, {0.5, 0, 0});
  for (int row = 1; row < scene::kRasterSize; ++row) CHECK(shifted.at(row, 60) == r0.at(row - 1, 60));
}

TEST_CASE("scene validation and JSON round trip") {
  scene::Scene s;
  for (std::size_t i = 0; i < scene::kRoutePoints; ++i) s.route.points[i] = {static_cast<double>(i + 1), 0.0};
  s.objects.push_back(box_at(10, 2, 0.3, 2.4, 1.0));
  s.objects.back().speed = 4.0;
  s.raster.set(3, 4, scene::RasterClass::SolidMarking);
  s.speed_limit_index = 2;
  const auto j = scene_to_json(s);
  CHECK(scene_from_json(j) == s);
  CHECK(scene_from_json(json::parse(j.dump())) == s);

  auto bad = j;
  bad["route"].erase(bad["route"].begin());
  try {
    scene_from_json(bad);
    FAIL("expected invariant error");
  } catch (const InvariantError& e) {
    CHECK(e.field() == "route");
  }
  auto bad_class = j;
  bad_class["objects"][0]["class"] = "Tram";
  CHECK_THROWS_AS(scene_from_json(bad_class), SchemaError);

  auto stop = s;
  stop.objects[0].cls = ObjectClass::TrafficLightStopLine;
  CHECK_THROWS_AS(scene::validate_scene(stop), InvariantError);

  auto spacing = s;
  spacing.route.points[5].x += 0.01;
  CHECK_THROWS_AS(scene::validate_scene(spacing), InvariantError);
}

TEST_CASE("resample_chord yields exact chord spacing on curves") {
  std::vector<Vec2> arc;
  for (int i = 0; i <= 200; ++i) {
    const double t = i * 0.01;
    arc.push_back({30.0 * std::sin(t), 30.0 - 30.0 * std::cos(t)});
  }
  const Polyline curve(arc);
  const auto pts = resample_chord(curve, 0.0, {0, 0}, 20, 1.0);
  REQUIRE(pts.size() == 20);
  CHECK((pts[0] - Vec2{0, 0}).norm() == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) CHECK(std::abs((pts[i + 1] - pts[i]).norm() - 1.0) < 1e-9);
  // running past the end extrapolates along the final tangent
  const auto past = resample_chord(Polyline({{0, 0}, {3, 0}}), 0.0, {0, 0}, 5, 1.0);
  CHECK(past.back().x == doctest::Approx(5.0));
}

TEST_CASE("geometry checks run fast") {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100, 100);
  std::vector<OrientedBox> boxes;
  for (int i = 0; i < 10000; ++i) boxes.push_back(box_at(u(rng), u(rng)));
  (void)scene::filter_by_range(boxes);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 10.0);
}
