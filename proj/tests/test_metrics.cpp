#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "plancraft/errors.hpp"
#include "plancraft/metrics.hpp"

using namespace plancraft;
using namespace plancraft::metrics;
using sim::InfractionKind;

namespace {

InfractionCounts one(InfractionKind k, int n = 1) {
  InfractionCounts c{};
  c[static_cast<std::size_t>(k)] = n;
  return c;
}

sim::EpisodeLog synthetic_log(std::mt19937_64& rng, double route_length, double rc) {
  sim::EpisodeLog log;
  log.route_length = route_length;
  log.distance_completed = rc * route_length;
  std::uniform_int_distribution<int> kind(0, static_cast<int>(kNumInfractionKinds) - 1);
  std::uniform_int_distribution<int> count(0, 4);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    log.infractions.push_back({static_cast<InfractionKind>(kind(rng)), static_cast<double>(i), {}, -1});
  }
  return log;
}

}  // namespace

TEST_CASE("route completion examples") {
  Polyline route({{0.0, 0.0}, {100.0, 0.0}});
  std::vector<Vec2> full, half;
  for (int i = 0; i <= 100; ++i) full.push_back({static_cast<double>(i), 0.3});
  for (int i = 0; i <= 50; ++i) half.push_back({static_cast<double>(i), -0.2});
  CHECK(route_completion(route, full) == doctest::Approx(1.0));
  CHECK(std::abs(route_completion(route, half) - 0.5) < 1e-3);

  // Progress is monotone: backing up does not reduce it.
  half.push_back({30.0, 0.0});
  CHECK(std::abs(route_completion(route, half) - 0.5) < 1e-3);
  // Deviation caps progress at the deviation point.
  std::vector<Vec2> deviating = {{10.0, 0.0}, {20.0, 0.0}, {30.0, 12.0}, {90.0, 0.0}};
  CHECK(route_completion(route, deviating) == doctest::Approx(0.2));

  CHECK(route_completion(Polyline({{3.0, 3.0}, {3.0, 3.0}}), full) == 1.0);
  sim::EpisodeLog empty;
  CHECK(route_completion(empty) == 1.0);
}

TEST_CASE("infraction and driving score examples") {
  const PenaltyTable t;
  CHECK(infraction_score({}, t) == 1.0);
  CHECK(driving_score(0.7, infraction_score({}, t)) == 0.7);
  CHECK(driving_score(0.5, infraction_score(one(InfractionKind::CollisionVehicle), t)) == doctest::Approx(0.30));
  CHECK(infraction_score(one(InfractionKind::RedLight, 2), t) == doctest::Approx(0.49));
  CHECK(infraction_score(one(InfractionKind::RouteDeviation, 3), t) == 1.0);
  CHECK_THROWS_AS(infraction_score(one(InfractionKind::RedLight, -1), t), InvariantError);
}

TEST_CASE("normalized driving score examples") {
  CHECK(normalized_driving_score(0.8, {}, 1.5) == 0.8);
  CHECK(normalized_driving_score(0.4, one(InfractionKind::CollisionVehicle), 0.0) == 0.4);
  // Closed form: 0.6^(1/2).
  CHECK(normalized_driving_score(1.0, one(InfractionKind::CollisionVehicle), 2.0) ==
        doctest::Approx(0.7745966692414834).epsilon(1e-12));
  CHECK(normalized_driving_score(1.0, one(InfractionKind::CollisionVehicle, 2), 4.0) ==
        doctest::Approx(normalized_driving_score(1.0, one(InfractionKind::CollisionVehicle), 2.0)).epsilon(1e-12));
}

TEST_CASE("success rate examples") {
  RouteResult clean;
  RouteResult crash;
  crash.counts = one(InfractionKind::CollisionVehicle);
  CHECK(success_rate({clean, clean, clean}) == 1.0);
  CHECK(success_rate({clean, clean, crash, clean, clean}) == doctest::Approx(0.8));
  RouteResult stop;
  stop.counts = one(InfractionKind::StopSign);
  CHECK(success_rate({stop}) == 0.0);
  RouteResult partial;
  partial.rc = 0.99;
  CHECK(success_rate({partial}) == 0.0);
  CHECK_THROWS_AS(success_rate({}), InvariantError);
}

TEST_CASE("penalty table validation") {
  PenaltyTable t;
  CHECK(t.at(InfractionKind::CollisionPedestrian) == 0.5);
  CHECK(t.at(InfractionKind::StopSign) == 0.8);
  CHECK_THROWS_AS(t.set(InfractionKind::RedLight, 0.0), ConfigError);
  CHECK_THROWS_AS(t.set(InfractionKind::RedLight, 1.2), ConfigError);
  const auto back = penalty_table_from_json({{"RedLight", 0.9}});
  CHECK(back.at(InfractionKind::RedLight) == 0.9);
  CHECK(back.at(InfractionKind::CollisionVehicle) == 0.6);
  CHECK_THROWS_AS(penalty_table_from_json({{"Speeding", 0.9}}), ConfigError);
  CHECK(penalty_table_from_json(to_json(t)).multipliers == t.multipliers);
}

TEST_CASE("score properties over randomized synthetic logs") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> len(50.0, 5000.0);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto log = synthetic_log(rng, len(rng), frac(rng));
    const auto r = evaluate(log);
    CHECK(r.ds == r.rc * r.is_);
    CHECK(r.ds <= r.rc);
    CHECK((r.ds == r.rc) == (r.is_ == 1.0));
    CHECK(r.nds >= 0.0);
    CHECK(r.nds <= r.rc);

    auto shuffled = log;
    std::shuffle(shuffled.infractions.begin(), shuffled.infractions.end(), rng);
    CHECK(evaluate(shuffled).is_ == r.is_);

    // Rate invariance: twice the route and twice the infractions at the same RC.
    auto doubled = log;
    doubled.route_length *= 2.0;
    doubled.distance_completed *= 2.0;
    doubled.infractions.insert(doubled.infractions.end(), log.infractions.begin(), log.infractions.end());
    if (r.km_driven > 0.0) CHECK(std::abs(evaluate(doubled).nds - r.nds) <= 1e-12);
  }
}

TEST_CASE("NDS is non-decreasing in RC at a fixed per-km infraction rate") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> km(0.05, 1.0);
  std::uniform_int_distribution<int> count(0, 3);
  int ds_drops = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double base_km = km(rng);
    InfractionCounts base{};
    for (auto& c : base) c = count(rng);
    const double route_km = 4.0 * base_km;
    double prev_nds = -1.0;
    double prev_ds = -1.0;
    for (int m = 1; m <= 4; ++m) {
      InfractionCounts c = base;
      for (auto& v : c) v *= m;
      const double rc = m * base_km / route_km;
      const double nds = normalized_driving_score(rc, c, m * base_km);
      const double ds = driving_score(rc, infraction_score(c));
      CHECK(nds >= prev_nds);
      if (ds < prev_ds) ++ds_drops;
      prev_nds = nds;
      prev_ds = ds;
    }
  }
  // The plain driving score does not have this property.
  CHECK(ds_drops > 0);
}

TEST_CASE("report aggregates") {
  std::vector<ReportEntry> entries(2);
  entries[0].result.rc = entries[0].result.ds = entries[0].result.nds = 1.0;
  entries[0].result.km_driven = 0.2;
  entries[1].result.rc = 0.5;
  entries[1].result.counts = one(InfractionKind::CollisionStatic);
  entries[1].result.is_ = 0.65;
  entries[1].result.ds = 0.325;
  entries[1].result.km_driven = 0.1;
  const auto rep = make_report(entries);
  CHECK(rep["episodes"].size() == 2);
  CHECK(rep["aggregate"]["rc"]["mean"].get<double>() == doctest::Approx(0.75));
  CHECK(rep["aggregate"]["rc"]["std"].get<double>() == doctest::Approx(0.25));
  CHECK(rep["aggregate"]["sr"].get<double>() == doctest::Approx(0.5));
  CHECK(rep["aggregate"]["infractions_per_km"]["CollisionStatic"].get<double>() == doctest::Approx(1.0 / 0.3));
}
