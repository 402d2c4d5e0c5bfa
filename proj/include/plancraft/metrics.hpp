#ifndef PLANCRAFT_METRICS_HPP_
#define PLANCRAFT_METRICS_HPP_

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/episode.hpp"

namespace plancraft::metrics {

using sim::InfractionKind;

inline constexpr std::size_t kNumInfractionKinds = sim::kAllInfractionKinds.size();
using InfractionCounts = std::array<int, kNumInfractionKinds>;

/// Per-kind multiplier in (0, 1]. Kinds without a penalty carry 1.
struct PenaltyTable {
  std::array<double, kNumInfractionKinds> multipliers;

  PenaltyTable();
  double at(InfractionKind k) const { return multipliers[static_cast<std::size_t>(k)]; }
  void set(InfractionKind k, double m);
};

nlohmann::json to_json(const PenaltyTable& t);
/// Keys are infraction kind names; unspecified kinds keep their defaults.
PenaltyTable penalty_table_from_json(const nlohmann::json& j);

struct RouteResult {
  double rc = 1.0;
  double is_ = 1.0;
  double ds = 1.0;
  double nds = 1.0;
  InfractionCounts counts{};
  double km_driven = 0.0;
};

InfractionCounts count_infractions(const std::vector<sim::InfractionEvent>& events);

/// Monotone closest-point progress of `positions` along `route`, divided by
/// its length. Progress stops at the first position more than the deviation
/// threshold off the route. A zero-length route counts as complete.
double route_completion(const Polyline& route, const std::vector<Vec2>& positions);
double route_completion(const sim::EpisodeLog& log);

double infraction_score(const InfractionCounts& counts, const PenaltyTable& table = {});
double driving_score(double rc, double is);
/// rc * prod_k table[k]^(count[k] / km); equals rc when km is zero.
double normalized_driving_score(double rc, const InfractionCounts& counts, double km, const PenaltyTable& table = {});

RouteResult evaluate(const sim::EpisodeLog& log, const PenaltyTable& table = {});

/// Fraction of episodes with full completion and no infraction of any kind.
/// Throws InvariantError on an empty list.
double success_rate(const std::vector<RouteResult>& results);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
/// Sample mean and population standard deviation.
Summary summarize(const std::vector<double>& values);

nlohmann::json to_json(const RouteResult& r);

struct ReportEntry {
  std::string name;
  std::string scenario;
  std::uint64_t seed = 0;
  RouteResult result;
};

/// Per-episode results plus aggregate means and standard deviations.
nlohmann::json make_report(const std::vector<ReportEntry>& entries);

}  // namespace plancraft::metrics

#endif  // PLANCRAFT_METRICS_HPP_
