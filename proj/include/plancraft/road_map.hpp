#ifndef PLANCRAFT_ROAD_MAP_HPP_
#define PLANCRAFT_ROAD_MAP_HPP_

#include <vector>

#include "plancraft/geometry.hpp"
#include "plancraft/scene.hpp"

namespace plancraft::sim {

enum class Marking { None, Solid, Broken };

struct Lane {
  Polyline centerline;
  double width = 3.5;
  /// Traffic flows in polyline order when true.
  bool forward = true;
  Marking left_marking = Marking::None;
  Marking right_marking = Marking::None;
  int left_neighbor = -1;
  int right_neighbor = -1;

  /// Lane boundary on the given side (left = +normal).
  Polyline boundary(bool left) const;
};

/// Lane graph used both for simulation and for raster rendering. A shared
/// boundary should carry its marking on one lane only.
struct RoadMap {
  std::vector<Lane> lanes;

  void validate() const;
  bool is_drivable(const Vec2& global) const;
};

}  // namespace plancraft::sim

namespace plancraft::scene {

/// Rasterizes drivable area and lane markings around `ego` at 0.5 m/cell.
RoadRaster render_road_raster(const sim::RoadMap& map, const Pose& ego);

/// Nearest-neighbour resample of `raster` into a frame displaced by `new_ego`
/// (expressed in the old ego frame). Cells falling outside become Background.
RoadRaster resample_raster(const RoadRaster& raster, const Pose& new_ego);

}  // namespace plancraft::scene

#endif  // PLANCRAFT_ROAD_MAP_HPP_
