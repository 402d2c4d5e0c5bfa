#include "plancraft/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "plancraft/errors.hpp"

namespace plancraft::metrics {

PenaltyTable::PenaltyTable() {
  multipliers.fill(1.0);
  set(InfractionKind::CollisionPedestrian, 0.50);
  set(InfractionKind::CollisionVehicle, 0.60);
  set(InfractionKind::CollisionStatic, 0.65);
  set(InfractionKind::RedLight, 0.70);
  set(InfractionKind::StopSign, 0.80);
  set(InfractionKind::ScenarioTimeout, 0.70);
}

void PenaltyTable::set(InfractionKind k, double m) {
  if (!(m > 0.0 && m <= 1.0)) {
    throw ConfigError("penalties." + std::string(sim::to_string(k)) + ": must lie in (0, 1]");
  }
  multipliers[static_cast<std::size_t>(k)] = m;
}

nlohmann::json to_json(const PenaltyTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (auto k : sim::kAllInfractionKinds) j[std::string(sim::to_string(k))] = t.at(k);
  return j;
}

PenaltyTable penalty_table_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("penalties: expected an object");
  PenaltyTable t;
  for (const auto& [key, value] : j.items()) {
    const auto kind = sim::infraction_kind_from_string(key);
    if (!kind) throw ConfigError("penalties." + key + ": unknown infraction kind");
    if (!value.is_number()) throw ConfigError("penalties." + key + ": expected a number");
    t.set(*kind, value.get<double>());
  }
  return t;
}

InfractionCounts count_infractions(const std::vector<sim::InfractionEvent>& events) {
  InfractionCounts c{};
  for (const auto& e : events) ++c[static_cast<std::size_t>(e.kind)];
  return c;
}

double route_completion(const Polyline& route, const std::vector<Vec2>& positions) {
  const double len = route.length();
  if (len <= 1e-9) return 1.0;
  double best = 0.0;
  for (const auto& p : positions) {
    const auto proj = route.project(p);
    if (std::abs(proj.lateral) > sim::kRouteDeviation) break;
    best = std::max(best, std::clamp(proj.s, 0.0, len));
  }
  return best / len;
}

double route_completion(const sim::EpisodeLog& log) {
  if (log.route_length <= 1e-9) return 1.0;
  return std::clamp(log.distance_completed / log.route_length, 0.0, 1.0);
}

double infraction_score(const InfractionCounts& counts, const PenaltyTable& table) {
  double is = 1.0;
  for (std::size_t k = 0; k < kNumInfractionKinds; ++k) {
    if (counts[k] < 0) throw InvariantError("counts", "negative infraction count");
    is *= std::pow(table.multipliers[k], counts[k]);
  }
  return is;
}

double driving_score(double rc, double is) { return rc * is; }

double normalized_driving_score(double rc, const InfractionCounts& counts, double km, const PenaltyTable& table) {
  if (km <= 0.0) return rc;
  double factor = 1.0;
  for (std::size_t k = 0; k < kNumInfractionKinds; ++k) {
    if (counts[k] < 0) throw InvariantError("counts", "negative infraction count");
    factor *= std::pow(table.multipliers[k], counts[k] / km);
  }
  return rc * factor;
}

RouteResult evaluate(const sim::EpisodeLog& log, const PenaltyTable& table) {
  RouteResult r;
  r.rc = route_completion(log);
  r.counts = count_infractions(log.infractions);
  r.is_ = infraction_score(r.counts, table);
  r.ds = driving_score(r.rc, r.is_);
  r.km_driven = std::clamp(log.distance_completed, 0.0, log.route_length) / 1000.0;
  r.nds = normalized_driving_score(r.rc, r.counts, r.km_driven, table);
  return r;
}

double success_rate(const std::vector<RouteResult>& results) {
  if (results.empty()) throw InvariantError("results", "success rate of an empty list");
  std::size_t ok = 0;
  for (const auto& r : results) {
    const bool clean = std::all_of(r.counts.begin(), r.counts.end(), [](int c) { return c == 0; });
    ok += r.rc >= 1.0 && clean;
  }
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

nlohmann::json to_json(const RouteResult& r) {
  nlohmann::json counts = nlohmann::json::object();
  for (auto k : sim::kAllInfractionKinds) counts[std::string(sim::to_string(k))] = r.counts[static_cast<std::size_t>(k)];
  return {{"rc", r.rc}, {"is", r.is_}, {"ds", r.ds}, {"nds", r.nds}, {"km_driven", r.km_driven}, {"infractions", counts}};
}

namespace {

nlohmann::json summary_json(const std::vector<double>& v) {
  const auto s = summarize(v);
  return {{"mean", s.mean}, {"std", s.std}};
}

double per_km(const std::vector<ReportEntry>& entries, InfractionKind k) {
  double km = 0.0;
  double n = 0.0;
  for (const auto& e : entries) {
    km += e.result.km_driven;
    n += e.result.counts[static_cast<std::size_t>(k)];
  }
  return km > 0.0 ? n / km : 0.0;
}

}  // namespace

nlohmann::json make_report(const std::vector<ReportEntry>& entries) {
  nlohmann::json report;
  report["episodes"] = nlohmann::json::array();
  std::vector<double> rc, is, ds, nds;
  std::vector<RouteResult> results;
  for (const auto& e : entries) {
    report["episodes"].push_back({{"name", e.name}, {"scenario", e.scenario}, {"seed", e.seed}, {"result", to_json(e.result)}});
    rc.push_back(e.result.rc);
    is.push_back(e.result.is_);
    ds.push_back(e.result.ds);
    nds.push_back(e.result.nds);
    results.push_back(e.result);
  }
  nlohmann::json agg = {{"episodes", entries.size()},
                        {"rc", summary_json(rc)},
                        {"is", summary_json(is)},
                        {"ds", summary_json(ds)},
                        {"nds", summary_json(nds)}};
  agg["sr"] = results.empty() ? 0.0 : success_rate(results);
  nlohmann::json rates = nlohmann::json::object();
  for (auto k : sim::kAllInfractionKinds) rates[std::string(sim::to_string(k))] = per_km(entries, k);
  agg["infractions_per_km"] = rates;
  report["aggregate"] = agg;
  return report;
}

}  // namespace plancraft::metrics
