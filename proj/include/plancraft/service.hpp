#ifndef PLANCRAFT_SERVICE_HPP_
#define PLANCRAFT_SERVICE_HPP_

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "plancraft/model.hpp"
#include "plancraft/scenarios.hpp"

namespace plancraft::service {

struct Response {
  int status = 200;
  std::string body;
};

/// Request handling for the HTTP API, independent of the transport. Holds
/// only the frozen model and the template list; safe for concurrent calls.
class Service {
 public:
  Service(model::PlannerModel model, std::vector<sim::ScenarioDef> templates);

  Response handle(const std::string& method, const std::string& path, const std::string& body) const;
  const model::PlannerModel& model() const { return model_; }

 private:
  nlohmann::json infer(const nlohmann::json& body) const;
  nlohmann::json perturb_apply(const nlohmann::json& body) const;
  nlohmann::json perturb_sweep(const nlohmann::json& body) const;

  model::PlannerModel model_;
  std::string model_id_;
  nlohmann::json scenarios_;
};

/// HTTP transport around a Service.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();

  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving `service` until the process is stopped.
void serve(const Service& service, const std::string& host, int port);

}  // namespace plancraft::service

#endif  // PLANCRAFT_SERVICE_HPP_
