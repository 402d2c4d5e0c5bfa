#include "plancraft/scene_json.hpp"

#include <openssl/evp.h>

#include "plancraft/errors.hpp"

namespace plancraft {

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw SchemaError("base64", "length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw SchemaError("base64", "invalid characters");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

double number_at(const json& j, const char* key, const std::string& field) {
  if (!j.contains(key)) throw SchemaError(field + "." + key, "missing");
  if (!j.at(key).is_number()) throw SchemaError(field + "." + key, "expected number");
  return j.at(key).get<double>();
}

}  // namespace

json box_to_json(const scene::OrientedBox& b) {
  return {{"class", std::string(scene::to_string(b.cls))},
          {"x", b.center_x},
          {"y", b.center_y},
          {"yaw", b.yaw},
          {"half_length", b.half_length},
          {"half_width", b.half_width},
          {"speed", b.speed}};
}

scene::OrientedBox box_from_json(const json& j, const std::string& field) {
  if (!j.is_object()) throw SchemaError(field, "expected object");
  scene::OrientedBox b;
  if (!j.contains("class") || !j.at("class").is_string()) throw SchemaError(field + ".class", "expected class name");
  auto cls = scene::object_class_from_string(j.at("class").get<std::string>());
  if (!cls) throw SchemaError(field + ".class", "unknown object class");
  b.cls = *cls;
  b.center_x = number_at(j, "x", field);
  b.center_y = number_at(j, "y", field);
  b.yaw = number_at(j, "yaw", field);
  b.half_length = number_at(j, "half_length", field);
  b.half_width = number_at(j, "half_width", field);
  b.speed = number_at(j, "speed", field);
  return b;
}

json points_to_json(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

std::vector<Vec2> points_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw SchemaError(field, "expected array of [x, y]");
  std::vector<Vec2> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw SchemaError(field + "[" + std::to_string(i) + "]", "expected [x, y]");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

std::vector<std::uint8_t> rle_encode(const std::vector<std::uint8_t>& cells) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t n = 1;
    while (i + n < cells.size() && n < 255 && cells[i + n] == cells[i]) ++n;
    out.push_back(cells[i]);
    out.push_back(static_cast<std::uint8_t>(n));
    i += n;
  }
  return out;
}

std::vector<std::uint8_t> rle_decode(const std::vector<std::uint8_t>& runs) {
  if (runs.size() % 2 != 0) throw SchemaError("raster.rle", "odd byte count");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < runs.size(); i += 2) {
    if (runs[i + 1] == 0) throw SchemaError("raster.rle", "zero-length run");
    out.insert(out.end(), runs[i + 1], runs[i]);
  }
  return out;
}

json scene_to_json(const scene::Scene& s, RasterFormat raster) {
  json objects = json::array();
  for (const auto& b : s.objects) objects.push_back(box_to_json(b));
  json j = {{"objects", std::move(objects)},
            {"route", points_to_json({s.route.points.begin(), s.route.points.end()})},
            {"speed_limit_index", s.speed_limit_index}};
  switch (raster) {
    case RasterFormat::Omit: j["raster"] = nullptr; break;
    case RasterFormat::Raw: j["raster"] = base64_encode(s.raster.cells); break;
    case RasterFormat::RunLength: j["raster"] = {{"rle", base64_encode(rle_encode(s.raster.cells))}}; break;
  }
  if (s.ego_speed) j["ego_speed"] = *s.ego_speed;
  return j;
}

scene::Scene scene_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("$", "expected scene object");
  scene::Scene s;
  if (!j.contains("objects") || !j.at("objects").is_array()) throw SchemaError("objects", "expected array");
  const auto& objs = j.at("objects");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    s.objects.push_back(box_from_json(objs[i], "objects[" + std::to_string(i) + "]"));
  }
  if (!j.contains("route")) throw SchemaError("route", "missing");
  const auto route = points_from_json(j.at("route"), "route");
  if (route.size() != scene::kRoutePoints) {
    throw InvariantError("route", "expected 20 route points, got " + std::to_string(route.size()));
  }
  std::copy(route.begin(), route.end(), s.route.points.begin());
  if (!j.contains("speed_limit_index") || !j.at("speed_limit_index").is_number_integer()) {
    throw SchemaError("speed_limit_index", "expected integer");
  }
  s.speed_limit_index = j.at("speed_limit_index").get<int>();
  if (!j.contains("raster")) throw SchemaError("raster", "missing");
  const auto& r = j.at("raster");
  if (r.is_string() || (r.is_object() && r.contains("rle") && r.at("rle").is_string())) {
    auto cells = r.is_string() ? base64_decode(r.get<std::string>()) : rle_decode(base64_decode(r.at("rle").get<std::string>()));
    if (cells.size() != static_cast<std::size_t>(scene::kRasterSize * scene::kRasterSize)) {
      throw InvariantError("raster", "expected 16384 cells, got " + std::to_string(cells.size()));
    }
    s.raster.cells = std::move(cells);
  } else if (!r.is_null()) {
    throw SchemaError("raster", "expected base64 string, {\"rle\": ...} or null");
  }
  if (j.contains("ego_speed") && !j.at("ego_speed").is_null()) {
    if (!j.at("ego_speed").is_number()) throw SchemaError("ego_speed", "expected number");
    s.ego_speed = j.at("ego_speed").get<double>();
  }
  scene::validate_scene(s);
  return s;
}

json plan_to_json(const PlanOutput& plan) {
  json j;
  j["path_points"] = plan.path_points ? points_to_json(*plan.path_points) : json(nullptr);
  j["waypoints"] = plan.waypoints ? points_to_json(*plan.waypoints) : json(nullptr);
  j["speed_probs"] = plan.speed_probs ? json(*plan.speed_probs) : json(nullptr);
  j["target_speed"] = plan.target_speed;
  return j;
}

PlanOutput plan_from_json(const json& j) {
  PlanOutput p;
  if (j.contains("path_points") && !j["path_points"].is_null()) p.path_points = points_from_json(j["path_points"], "path_points");
  if (j.contains("waypoints") && !j["waypoints"].is_null()) p.waypoints = points_from_json(j["waypoints"], "waypoints");
  if (j.contains("speed_probs") && !j["speed_probs"].is_null()) p.speed_probs = j["speed_probs"].get<std::vector<double>>();
  p.target_speed = j.value("target_speed", 0.0);
  return p;
}

}  // namespace plancraft
