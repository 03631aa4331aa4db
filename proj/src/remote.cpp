#include "mocha/remote.hpp"

#include <cmath>

#include "httplib.h"
#include "mocha/errors.hpp"

namespace mocha {

HttpJsonTransport::HttpJsonTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw ConfigError("endpoint: base_url is empty");
  if (cfg_.retries < 0) throw ConfigError("endpoint: retries must be >= 0");
}

nlohmann::json HttpJsonTransport::post(const nlohmann::json& request) {
  httplib::Client client(cfg_.base_url);
  const auto secs = static_cast<time_t>(std::floor(cfg_.timeout_seconds));
  const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const std::string body = request.dump();
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    auto res = client.Post(cfg_.path, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("unparsable response: ") + e.what();
    }
  }
  throw ServiceError(cfg_.base_url + cfg_.path + ": " + last_error + " after " + std::to_string(cfg_.retries + 1) +
                     " attempt(s)");
}

std::shared_ptr<JsonTransport> make_http_transport(const EndpointConfig& cfg) {
  return std::make_shared<HttpJsonTransport>(cfg);
}

}  // namespace mocha
