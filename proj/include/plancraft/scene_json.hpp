#ifndef PLANCRAFT_SCENE_JSON_HPP_
#define PLANCRAFT_SCENE_JSON_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/plan.hpp"
#include "plancraft/scene.hpp"

namespace plancraft {

using json = nlohmann::json;

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

json box_to_json(const scene::OrientedBox& box);
scene::OrientedBox box_from_json(const json& j, const std::string& field);

/// Raster encodings: null, a base64 string of the raw cells, or
/// {"rle": base64 of (value, run length) byte pairs}.
enum class RasterFormat { Omit, Raw, RunLength };

std::vector<std::uint8_t> rle_encode(const std::vector<std::uint8_t>& cells);
std::vector<std::uint8_t> rle_decode(const std::vector<std::uint8_t>& runs);

/// Wire format shared by shards, the service and the workbench.
json scene_to_json(const scene::Scene& scene, RasterFormat raster = RasterFormat::Raw);
/// Parses and validates: SchemaError for malformed documents,
/// InvariantError for well-formed scenes that break Scene invariants.
scene::Scene scene_from_json(const json& j);

json plan_to_json(const PlanOutput& plan);
PlanOutput plan_from_json(const json& j);

json points_to_json(const std::vector<Vec2>& pts);
std::vector<Vec2> points_from_json(const json& j, const std::string& field);

}  // namespace plancraft

#endif  // PLANCRAFT_SCENE_JSON_HPP_
