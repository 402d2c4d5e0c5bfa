#include "plancraft/service.hpp"

#include <httplib.h>

#include "plancraft/errors.hpp"
#include "plancraft/perturb.hpp"
#include "plancraft/scene_json.hpp"

namespace plancraft::service {

using nlohmann::json;

namespace {

Response error(int status, const std::string& message, const std::string& field = {}) {
  json j{{"error", message}};
  if (!field.empty()) j["field"] = field;
  return {status, j.dump()};
}

const json& member(const json& body, const std::string& key) {
  if (!body.is_object()) throw SchemaError("body", "expected an object");
  if (!body.contains(key)) throw SchemaError(key, "missing");
  return body.at(key);
}

}  // namespace

Service::Service(model::PlannerModel model, std::vector<sim::ScenarioDef> templates)
    : model_(std::move(model)), model_id_(model_.id()), scenarios_(json::array()) {
  for (const auto& def : templates) {
    const auto world = sim::build_world(def, 0);
    scenarios_.push_back({{"name", def.name},
                          {"kind", sim::to_string(def.kind)},
                          {"definition", sim::to_json(def)},
                          {"scene", scene_to_json(sim::make_scene(world), RasterFormat::Raw)}});
  }
}

json Service::infer(const json& body) const {
  const auto scene = scene_from_json(body);
  const auto plan = model_.infer(scene);
  return {{"model", model_id_}, {"head", to_string(model_.config().head)}, {"plan", plan_to_json(plan)},
          {"target_speed", plan.target_speed}};
}

json Service::perturb_apply(const json& body) const {
  const auto scene = scene_from_json(member(body, "scene"));
  const auto spec = perturb::spec_from_json(member(body, "spec"));
  const auto applied = perturb::apply(scene, spec);
  return {{"scene", scene_to_json(applied.scene, RasterFormat::Raw)},
          {"ids", applied.ids},
          {"off_drivable", applied.off_drivable()},
          {"off_drivable_ops", applied.off_drivable_ops}};
}

json Service::perturb_sweep(const json& body) const {
  const auto scene = scene_from_json(member(body, "scene"));
  const auto request = perturb::sweep_request_from_json(member(body, "sweep"));
  const auto result = perturb::sweep(scene, request, model_);
  json j = perturb::to_json(result);
  json jumps = json::array();
  for (const auto& [value, delta] : perturb::jump_detector(result)) jumps.push_back({{"value", value}, {"delta", delta}});
  j["jumps"] = jumps;
  return j;
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    if (path == "/healthz" || path == "/scenarios") {
      if (method != "GET") return error(405, "method not allowed");
      if (path == "/healthz") return {200, json{{"status", "ok"}, {"model", model_id_}}.dump()};
      return {200, json{{"scenarios", scenarios_}}.dump()};
    }
    if (path != "/infer" && path != "/perturb/apply" && path != "/perturb/sweep") return error(404, "not found");
    if (method != "POST") return error(405, "method not allowed");
    json parsed;
    try {
      parsed = json::parse(body);
    } catch (const json::parse_error&) {
      return error(400, "request body is not valid JSON", "body");
    }
    if (path == "/infer") return {200, infer(parsed).dump()};
    if (path == "/perturb/apply") return {200, perturb_apply(parsed).dump()};
    return {200, perturb_sweep(parsed).dump()};
  } catch (const SchemaError& e) {
    return error(400, e.what(), e.field());
  } catch (const ConfigError& e) {
    return error(400, e.what());
  } catch (const json::exception&) {
    return error(400, "malformed request");
  } catch (const InvariantError& e) {
    return error(422, e.what(), e.field());
  } catch (...) {
    return error(500, "internal error");
  }
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>()) {
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  auto& server = impl_->server;
  server.Get(".*", route);
  server.Post(".*", route);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(const Service& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.run();
}

}  // namespace plancraft::service
