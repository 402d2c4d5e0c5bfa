#include "plancraft/road_map.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "plancraft/errors.hpp"

namespace plancraft {
namespace {

// Inside test against one lane segment: the strip of half-width hw over the
// segment, plus a disc at interior vertices so bends have no gaps.
bool inside_segment(const Vec2& p, const Vec2& a, const Vec2& b, double hw, bool disc_at_a) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 <= 0.0) return false;
  const double u = (p - a).dot(ab) / len2;
  if (u >= 0.0 && u <= 1.0) {
    const double lat = std::abs(ab.cross(p - a)) / std::sqrt(len2);
    if (lat < hw) return true;
  }
  return disc_at_a && (p - a).norm() < hw;
}

}  // namespace
}  // namespace plancraft

namespace plancraft::sim {

Polyline Lane::boundary(bool left) const {
  return offset_polyline(centerline, (left ? 0.5 : -0.5) * width);
}

void RoadMap::validate() const {
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const auto& lane = lanes[i];
    if (lane.centerline.size() < 2) throw InvariantError("lanes[" + std::to_string(i) + "]", "needs >= 2 points");
    if (!(lane.width > 2.0)) throw InvariantError("lanes[" + std::to_string(i) + "].width", "must exceed 2.0 m");
    for (int nb : {lane.left_neighbor, lane.right_neighbor}) {
      if (nb >= static_cast<int>(lanes.size())) {
        throw InvariantError("lanes[" + std::to_string(i) + "]", "neighbor index out of range");
      }
    }
  }
}

bool RoadMap::is_drivable(const Vec2& global) const {
  for (const auto& lane : lanes) {
    const auto& pts = lane.centerline.points();
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (inside_segment(global, pts[i], pts[i + 1], 0.5 * lane.width, i > 0)) return true;
    }
  }
  return false;
}

}  // namespace plancraft::sim

namespace plancraft::scene {

namespace {

constexpr double kMarkingSample = 0.125;
constexpr double kDashOn = 3.0;
constexpr double kDashPeriod = 6.0;

void rasterize_lane(const sim::Lane& lane, const Pose& ego, RoadRaster& raster) {
  const auto& pts = lane.centerline.points();
  const double hw = 0.5 * lane.width;
  const double reach = kRasterHalfExtent * std::sqrt(2.0) + hw + 1.0;
  std::vector<Vec2> local(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) local[i] = point_to_ego_frame(pts[i], ego);

  for (std::size_t i = 0; i + 1 < local.size(); ++i) {
    const Vec2 a = local[i];
    const Vec2 b = local[i + 1];
    if (a.norm() > reach + (b - a).norm() && b.norm() > reach + (b - a).norm()) continue;
    const double xmin = std::min(a.x, b.x) - hw, xmax = std::max(a.x, b.x) + hw;
    const double ymin = std::min(a.y, b.y) - hw, ymax = std::max(a.y, b.y) + hw;
    const int r0 = std::max(0, static_cast<int>(std::floor((kRasterHalfExtent - xmax) / kRasterResolution)));
    const int r1 = std::min(kRasterSize - 1, static_cast<int>(std::floor((kRasterHalfExtent - xmin) / kRasterResolution)));
    const int c0 = std::max(0, static_cast<int>(std::floor((kRasterHalfExtent - ymax) / kRasterResolution)));
    const int c1 = std::min(kRasterSize - 1, static_cast<int>(std::floor((kRasterHalfExtent - ymin) / kRasterResolution)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (raster.at(r, c) != RasterClass::Background) continue;
        if (inside_segment(RoadRaster::cell_center(r, c), a, b, hw, i > 0)) {
          raster.set(r, c, RasterClass::DrivableRoad);
        }
      }
    }
  }
}

void rasterize_marking(const Polyline& line, sim::Marking marking, const Pose& ego, RoadRaster& raster) {
  if (marking == sim::Marking::None) return;
  const RasterClass cls = marking == sim::Marking::Solid ? RasterClass::SolidMarking : RasterClass::BrokenMarking;
  const double length = line.length();
  const auto n = static_cast<long>(std::floor(length / kMarkingSample));
  for (long k = 0; k <= n; ++k) {
    const double u = static_cast<double>(k) * kMarkingSample;
    if (marking == sim::Marking::Broken && std::fmod(u, kDashPeriod) >= kDashOn) continue;
    const Vec2 p = point_to_ego_frame(line.point_at(u), ego);
    if (std::abs(p.x) > kRasterHalfExtent + 1.0 || std::abs(p.y) > kRasterHalfExtent + 1.0) continue;
    if (auto cell = RoadRaster::cell_of(p)) raster.set(cell->first, cell->second, cls);
  }
}

}  // namespace

RoadRaster render_road_raster(const sim::RoadMap& map, const Pose& ego) {
  RoadRaster raster;
  for (const auto& lane : map.lanes) rasterize_lane(lane, ego, raster);
  for (const auto& lane : map.lanes) {
    if (lane.left_marking != sim::Marking::None) rasterize_marking(lane.boundary(true), lane.left_marking, ego, raster);
    if (lane.right_marking != sim::Marking::None) rasterize_marking(lane.boundary(false), lane.right_marking, ego, raster);
  }
  return raster;
}

RoadRaster resample_raster(const RoadRaster& raster, const Pose& new_ego) {
  RoadRaster out;
  for (int r = 0; r < kRasterSize; ++r) {
    for (int c = 0; c < kRasterSize; ++c) {
      const Vec2 old_frame = point_from_ego_frame(RoadRaster::cell_center(r, c), new_ego);
      if (auto cell = RoadRaster::cell_of(old_frame)) out.set(r, c, raster.at(cell->first, cell->second));
    }
  }
  return out;
}

}  // namespace plancraft::scene
