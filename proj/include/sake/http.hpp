#pragma once

// Thin JSON-over-HTTP helpers on top of cpp-httplib.

#include <chrono>
#include <cstdlib>
#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "sake/common.hpp"

namespace sake::http {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

// Splits "http://host:port/some/path" into origin and path.
inline Endpoint split_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw config_error("BadUrl", "URL needs a scheme: " + std::string(url));
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

inline std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::move(fallback);
}

struct ClientOptions {
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds read_timeout{60000};
  std::string bearer_token;
};

// POSTs `body` and returns the decoded JSON response. Transport failures map
// to Error{Upstream, timeout_code} for timeouts and Error{Upstream,
// unavailable_code} otherwise; non-2xx replies carry the server's error body.
inline nlohmann::json post_json(const Endpoint& ep, const nlohmann::json& body, const ClientOptions& opts,
                                const std::string& unavailable_code, const std::string& timeout_code) {
  httplib::Client client(ep.origin);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(opts.connect_timeout).count(),
                                static_cast<long>((opts.connect_timeout.count() % 1000) * 1000));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(opts.read_timeout).count(),
                          static_cast<long>((opts.read_timeout.count() % 1000) * 1000));
  httplib::Headers headers;
  if (!opts.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + opts.bearer_token);
  auto res = client.Post(ep.path, headers, body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace),
                         "application/json");
  if (!res) {
    const auto err = res.error();
    const bool timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
    throw upstream_error(timeout ? timeout_code : unavailable_code,
                         ep.origin + ep.path + ": " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300)
    throw upstream_error(unavailable_code,
                         ep.origin + ep.path + ": HTTP " + std::to_string(res->status) + " " + res->body);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw upstream_error(unavailable_code, ep.origin + ep.path + ": bad JSON reply: " + e.what());
  }
}

inline void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
}

inline void reply_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  reply_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

}  // namespace sake::http
