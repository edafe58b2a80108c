#include <httplib.h>

#include <cstdlib>

#include "elnkit/errors.hpp"
#include "elnkit/llm.hpp"

namespace elnkit::llm {

HttpBackend::HttpBackend(HttpOptions opts) : opts_(std::move(opts)) {
  while (!opts_.url.empty() && opts_.url.back() == '/') opts_.url.pop_back();
  if (opts_.url.empty()) throw UsageError("LLM endpoint: empty URL");
  if (opts_.url.rfind("http://", 0) != 0) {
    throw UsageError("LLM endpoint: only http:// URLs are supported (built without TLS): " + opts_.url);
  }
  if (!opts_.auth_token) {
    if (const char* env = std::getenv("ELNKIT_LLM_TOKEN"); env && *env) opts_.auth_token = env;
  }
}

std::string HttpBackend::complete(const CorrectionRequest& req) {
  // Split "scheme://host:port/base" so a base path in front of /correct works.
  std::string origin = opts_.url;
  std::string base;
  if (const auto scheme = opts_.url.find("://"); scheme != std::string::npos) {
    if (const auto slash = opts_.url.find('/', scheme + 3); slash != std::string::npos) {
      origin = opts_.url.substr(0, slash);
      base = opts_.url.substr(slash);
    }
  }
  httplib::Client client(origin);
  const auto timeout = std::chrono::milliseconds(opts_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (opts_.auth_token) headers.emplace("Authorization", "Bearer " + *opts_.auth_token);

  auto res = client.Post(base + "/correct", headers, request_body(req).dump(), "application/json");
  if (!res) throw TransportError("LLM endpoint: " + httplib::to_string(res.error()), 1);
  if (res->status >= 500 || res->status == 429 || res->status == 408) {
    throw TransportError("LLM endpoint: HTTP " + std::to_string(res->status), 1);
  }
  if (res->status != 200) throw ProtocolError("LLM endpoint: HTTP " + std::to_string(res->status));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("LLM endpoint: response is not JSON");
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw ProtocolError("LLM endpoint: response lacks a string \"text\"");
  }
  return j["text"].get<std::string>();
}

}  // namespace elnkit::llm
