#pragma once

#include <memory>
#include <string>

#include "json.hpp"

namespace mocha {

struct EndpointConfig {
  // e.g. "http://127.0.0.1:8080"
  std::string base_url;
  std::string path = "/";
  double timeout_seconds = 30.0;
  int retries = 2;
};

// One JSON request, one JSON response.
class JsonTransport {
 public:
  virtual ~JsonTransport() = default;
  // Throws ServiceError when the exchange fails.
  virtual nlohmann::json post(const nlohmann::json& request) = 0;
};

// HTTP POST with retry; non-2xx responses and unparsable bodies count as
// failed attempts.
class HttpJsonTransport : public JsonTransport {
 public:
  explicit HttpJsonTransport(EndpointConfig cfg);
  nlohmann::json post(const nlohmann::json& request) override;

 private:
  EndpointConfig cfg_;
};

std::shared_ptr<JsonTransport> make_http_transport(const EndpointConfig& cfg);

}  // namespace mocha
