#pragma once

// Search gateway over HTTP.
//
//   POST /text_search, POST /image_search
//     request  {"queries": [{"entity": str, "q": str}, ...]}
//     200      {"results": [{"entity", "q", "results": [{"title","summary","url","image_ref"?,"degraded"?}]}]}
//     400      {"error": {"code": "MalformedRequest", "message"}}
//     502      {"error": {"code": "BackendUnavailable", "message"}}
//   GET /health -> {"status": "ok", "backend_calls", "cache_hits", "cache_misses", "coalesced"}
//
// Requests are served concurrently by the httplib worker pool; the gateway
// provides caching and single-flight deduplication.

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sake/common.hpp"
#include "sake/http.hpp"
#include "sake/protocol.hpp"
#include "sake/toolgw.hpp"

namespace sake {

inline nlohmann::ordered_json results_to_json(const std::vector<QueryResults>& batch) {
  nlohmann::ordered_json j;
  j["results"] = nlohmann::ordered_json::array();
  for (const auto& [q, results] : batch) {
    nlohmann::ordered_json item;
    item["entity"] = q.entity;
    item["q"] = q.q;
    item["results"] = nlohmann::ordered_json::array();
    for (const auto& r : results) item["results"].push_back(to_json(r));
    j["results"].push_back(std::move(item));
  }
  return j;
}

inline std::vector<QueryResults> results_from_json(const nlohmann::json& j) {
  std::vector<QueryResults> out;
  for (const auto& item : j.at("results")) {
    QueryResults qr;
    qr.query = {item.at("entity").get<std::string>(), item.at("q").get<std::string>()};
    for (const auto& r : item.at("results")) qr.results.push_back(search_result_from_json(r));
    out.push_back(std::move(qr));
  }
  return out;
}

class ToolServer {
 public:
  using Logger = std::function<void(const std::string&)>;

  explicit ToolServer(std::shared_ptr<SearchGateway> gateway, Logger log = {})
      : gateway_(std::move(gateway)), log_(std::move(log)) {
    server_.Post("/text_search", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, Modality::Text);
    });
    server_.Post("/image_search", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, Modality::Image);
    });
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = gateway_->stats();
      http::reply_json(res, 200,
                       {{"status", "ok"},
                        {"backend_calls", s.backend_calls},
                        {"cache_hits", s.cache_hits},
                        {"cache_misses", s.cache_misses},
                        {"coalesced", s.coalesced}});
    });
  }

  ~ToolServer() { stop(); }
  ToolServer(const ToolServer&) = delete;
  ToolServer& operator=(const ToolServer&) = delete;

  // port 0 picks an ephemeral port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw config_error("BindFailure", "cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  // Blocks until stop() is called from another thread or a signal handler.
  void serve_forever() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  void handle(const httplib::Request& req, httplib::Response& res, Modality modality) {
    SearchQuerySet set;
    try {
      set = detail::decode_queries(nlohmann::json::parse(req.body), modality);
    } catch (const std::exception& e) {
      http::reply_error(res, 400, "MalformedRequest", e.what());
      return;
    }
    std::vector<QueryResults> batch;
    try {
      for (const auto& q : set.entries) batch.push_back({q, gateway_->search(q.q, modality)});
    } catch (const Error& e) {
      http::reply_error(res, e.kind() == ErrorKind::Upstream ? 502 : 400, e.code(), e.what());
      return;
    }
    if (log_) {
      log_(nlohmann::json{{"event", "search"},
                          {"modality", std::string(to_string(modality))},
                          {"queries", set.entries.size()}}
               .dump());
    }
    http::reply_json(res, 200, results_to_json(batch));
  }

  std::shared_ptr<SearchGateway> gateway_;
  Logger log_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

// Tools backed by a remote ToolServer. Produces the same observation text as
// GatewayTools over the same gateway state.
class HttpTools final : public Tools {
 public:
  explicit HttpTools(std::string base_url) : base_url_(std::move(base_url)) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  }

  Observation execute(const SearchQuerySet& queries) override {
    const auto path = queries.modality == Modality::Text ? "/text_search" : "/image_search";
    auto ep = http::split_url(base_url_ + path);
    const auto body = nlohmann::json::parse(detail::dump_tag_safe(to_json(queries)));
    const auto reply = http::post_json(ep, body, {}, "ToolUnavailable", "ToolUnavailable");
    return make_observation(queries.modality, results_from_json(reply));
  }

  std::string describe() const override { return "http:" + base_url_; }

 private:
  std::string base_url_;
};

// External search engine adapter. POSTs {"q", "modality", "k"} with the key
// from SAKE_SEARCH_API_KEY and expects {"results": [{"title", "snippet"|"summary",
// "url", "image_ref"}]}. A provider-specific shim translates to its own API.
class HttpSearchBackend final : public SearchBackend {
 public:
  HttpSearchBackend(std::string url, std::size_t k, std::string api_key = http::env_or("SAKE_SEARCH_API_KEY"))
      : url_(std::move(url)), endpoint_(http::split_url(url_)), k_(k), api_key_(std::move(api_key)) {}

  std::vector<SearchResult> fetch(std::string_view query, Modality modality) override {
    http::ClientOptions opts;
    opts.bearer_token = api_key_;
    const auto reply = http::post_json(endpoint_, {{"q", query}, {"modality", to_string(modality)}, {"k", k_}}, opts,
                                       "BackendUnavailable", "BackendUnavailable");
    std::vector<SearchResult> out;
    for (const auto& r : reply.at("results")) out.push_back(search_result_from_json(r));
    return out;
  }

  std::string id() const override { return "external:" + url_; }

 private:
  std::string url_;
  http::Endpoint endpoint_;
  std::size_t k_;
  std::string api_key_;
};

// Summarizer served by a model endpoint: POST {"query", "title", "text"} ->
// {"summary"}.
class RemoteSummarizer final : public Summarizer {
 public:
  explicit RemoteSummarizer(std::string url) : endpoint_(http::split_url(url)) {}

  std::string summarize(std::string_view query, const SearchResult& raw) override {
    const auto reply = http::post_json(endpoint_, {{"query", query}, {"title", raw.title}, {"text", raw.summary}}, {},
                                       "SummarizerUnavailable", "SummarizerUnavailable");
    return reply.value("summary", "");
  }

 private:
  http::Endpoint endpoint_;
};

}  // namespace sake
