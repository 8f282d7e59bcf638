#pragma once

// Remote policy backend.
//
// Request (POST, JSON):
//   {"model", "trajectory_id", "history", "images": [..], "stop": [..],
//    "max_tokens", "temperature", "seed"}
// Reply:
//   {"text": "...", "token_count": n}     token_count optional
//
// Environment: SAKE_POLICY_URL, SAKE_POLICY_TOKEN (bearer), SAKE_POLICY_MODEL.

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sake/common.hpp"
#include "sake/http.hpp"
#include "sake/policy.hpp"

namespace sake {

struct RemotePolicyConfig {
  std::string url;  // full endpoint URL, e.g. http://127.0.0.1:8000/generate
  std::string model;
  double temperature = 1.0;
  std::string auth_token;
  std::chrono::milliseconds timeout{120000};

  static RemotePolicyConfig from_env() {
    RemotePolicyConfig c;
    c.url = http::env_or("SAKE_POLICY_URL");
    c.auth_token = http::env_or("SAKE_POLICY_TOKEN");
    c.model = http::env_or("SAKE_POLICY_MODEL");
    return c;
  }
};

class RemotePolicy final : public Policy {
 public:
  explicit RemotePolicy(RemotePolicyConfig cfg) : cfg_(std::move(cfg)), endpoint_(http::split_url(cfg_.url)) {}

  Generation generate(const GenerateRequest& request) override {
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["trajectory_id"] = request.trajectory_id;
    body["history"] = request.history;
    body["images"] = request.images;
    body["stop"] = request.stop_tags;
    body["max_tokens"] = request.max_tokens;
    body["temperature"] = cfg_.temperature;
    body["seed"] = request.seed;
    http::ClientOptions opts;
    opts.read_timeout = cfg_.timeout;
    opts.bearer_token = cfg_.auth_token;
    const auto reply = http::post_json(endpoint_, body, opts, "PolicyUnavailable", "EndpointTimeout");
    if (!reply.contains("text") || !reply["text"].is_string())
      throw upstream_error("PolicyUnavailable", "reply has no text field");
    // Endpoints may ignore stop sequences; enforce them here.
    Generation g;
    g.text = truncate_at_stop(reply["text"].get<std::string>(), request.stop_tags);
    g.token_count = reply.contains("token_count") ? reply["token_count"].get<std::size_t>() : word_count(g.text);
    return g;
  }

  std::string describe() const override { return "remote:" + cfg_.url; }

 private:
  RemotePolicyConfig cfg_;
  http::Endpoint endpoint_;
};

// Serves any Policy over the remote wire format at POST /generate. Used as a
// loopback stub in tests and for fronting fixtures to external tooling.
class PolicyServer {
 public:
  explicit PolicyServer(std::shared_ptr<Policy> policy) : policy_(std::move(policy)) {
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        http::reply_error(res, 400, "MalformedRequest", e.what());
        return;
      }
      GenerateRequest g;
      g.trajectory_id = body.value("trajectory_id", "");
      g.history = body.value("history", "");
      if (body.contains("images")) g.images = body["images"].get<std::vector<std::string>>();
      if (body.contains("stop")) g.stop_tags = body["stop"].get<std::vector<std::string>>();
      g.max_tokens = body.value("max_tokens", std::size_t{18432});
      g.seed = body.value("seed", std::uint64_t{0});
      try {
        const auto gen = policy_->generate(g);
        http::reply_json(res, 200, {{"text", gen.text}, {"token_count", gen.token_count}});
      } catch (const Error& e) {
        http::reply_error(res, 503, e.code(), e.what());
      }
    });
  }

  ~PolicyServer() { stop(); }
  PolicyServer(const PolicyServer&) = delete;
  PolicyServer& operator=(const PolicyServer&) = delete;

  // Binds to an ephemeral port on `host` and serves in a background thread.
  int start(const std::string& host = "127.0.0.1") {
    port_ = server_.bind_to_any_port(host);
    if (port_ <= 0) throw config_error("BindFailure", "cannot bind policy server on " + host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const noexcept { return port_; }

 private:
  std::shared_ptr<Policy> policy_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace sake
