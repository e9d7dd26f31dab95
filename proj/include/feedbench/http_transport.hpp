#pragma once

// Kept out of feedbench.hpp: pulls in cpp-httplib, which only binaries that
// talk to a real endpoint need.

#include <memory>
#include <string>

#include "feedbench/llm_gateway.hpp"
#include "httplib.h"

namespace feedbench {

/// OpenAI-compatible HTTP transport. Bearer credentials come from the
/// environment variable named in the gateway profile.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const GatewayProfile& profile, std::chrono::seconds timeout = std::chrono::seconds(300))
      : client_(profile.endpoint), api_key_(read_credentials(profile)) {
    client_.set_read_timeout(timeout);
    client_.set_write_timeout(timeout);
    client_.set_connection_timeout(std::chrono::seconds(10));
  }

  json post(const std::string& path, const json& body) override {
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client_.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      fail(ErrorCode::transport_error, "request to " + path + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 401 || res->status == 403) {
      fail(ErrorCode::auth_failure, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
      fail(ErrorCode::transport_error, "HTTP " + std::to_string(res->status) + " from " + path);
    }
    if (res->status >= 400) {
      fail(ErrorCode::gateway_exhausted, "HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
    }
    auto parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) fail(ErrorCode::transport_error, "non-JSON response from " + path);
    return parsed;
  }

 private:
  httplib::Client client_;
  std::string api_key_;
};

}  // namespace feedbench
