#pragma once

// Declarative run configuration: one flat JSON object. Every key is
// optional; missing keys take the defaults below, unknown keys are an error.
// The fully resolved config is echoed next to every output so a run can be
// repeated from it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/grpo.hpp"
#include "sake/jsonl.hpp"
#include "sake/metrics.hpp"
#include "sake/reward.hpp"
#include "sake/rollout.hpp"
#include "sake/secot.hpp"
#include "sake/tagger.hpp"
#include "sake/toolgw.hpp"

namespace sake {

struct RunConfig {
  // rollout
  std::size_t max_actions = 3;
  std::size_t max_invalid_retries = 3;
  std::size_t max_response_tokens = 18432;
  std::size_t group_size = 8;
  std::string prompt_template = RolloutConfig{}.prompt_template;
  std::string instruction;
  // tools
  std::size_t k_results = kDefaultTopK;
  double cache_threshold = kDefaultCacheThreshold;
  std::string cache_file;
  std::string summarizer_url;
  // tagging / evaluation
  std::size_t difficulty_n = 4;
  double iou_threshold = kDefaultIouThreshold;
  // reward
  double lambda_f1 = 0.9;
  double lambda_fmt = 0.1;
  double lambda_search = 0.01;
  double gamma = 0.8;
  // grpo
  double clip_eps = 0.2;
  double kl_beta = 0.001;
  // secot
  std::size_t secot_max_turns = 3;
  std::size_t secot_resamples = 0;
  // policy endpoint (token comes from SAKE_POLICY_TOKEN)
  std::string policy_model;
  double temperature = 1.0;
  // reproducibility
  std::uint64_t seed = 0;

  RolloutConfig rollout() const {
    RolloutConfig r;
    r.max_actions = max_actions;
    r.max_invalid_retries = max_invalid_retries;
    r.max_response_tokens = max_response_tokens;
    r.prompt_template = prompt_template;
    r.instruction = instruction;
    return r;
  }

  RewardConfig reward() const { return {lambda_f1, lambda_fmt, lambda_search, gamma}; }

  GatewayConfig gateway() const {
    GatewayConfig g;
    g.k_results = k_results;
    g.cache_threshold = cache_threshold;
    if (!cache_file.empty()) g.cache_file = cache_file;
    return g;
  }

  TaggerConfig tagger() const {
    TaggerConfig t;
    t.n = difficulty_n;
    t.iou_threshold = iou_threshold;
    t.seed = seed;
    t.prompt = rollout();
    return t;
  }

  SeCoTConfig secot() const {
    SeCoTConfig s;
    s.rollout = rollout();
    s.max_turns = secot_max_turns;
    s.resamples = secot_resamples;
    s.seed = seed;
    return s;
  }

  void validate() const {
    rollout().validate();
    reward().validate();
    if (group_size < 2) throw config_error("BadConfig", "group_size must be >= 2");
    if (k_results < 1) throw config_error("BadConfig", "k_results must be >= 1");
    if (difficulty_n < 1) throw config_error("BadConfig", "difficulty_n must be >= 1");
    if (!(cache_threshold >= 0.0 && cache_threshold <= 1.0))
      throw config_error("BadConfig", "cache_threshold must be in [0, 1]");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
      throw config_error("BadConfig", "iou_threshold must be in (0, 1)");
    if (clip_eps < 0.0 || kl_beta < 0.0) throw config_error("BadConfig", "clip_eps and kl_beta must be >= 0");
  }
};

namespace detail {

// Visits every (key, field) pair; keeps the key list in one place.
template <class Config, class F>
void for_each_field(Config& c, F&& f) {
  f("max_actions", c.max_actions);
  f("max_invalid_retries", c.max_invalid_retries);
  f("max_response_tokens", c.max_response_tokens);
  f("group_size", c.group_size);
  f("prompt_template", c.prompt_template);
  f("instruction", c.instruction);
  f("k_results", c.k_results);
  f("cache_threshold", c.cache_threshold);
  f("cache_file", c.cache_file);
  f("summarizer_url", c.summarizer_url);
  f("difficulty_n", c.difficulty_n);
  f("iou_threshold", c.iou_threshold);
  f("lambda_f1", c.lambda_f1);
  f("lambda_fmt", c.lambda_fmt);
  f("lambda_search", c.lambda_search);
  f("gamma", c.gamma);
  f("clip_eps", c.clip_eps);
  f("kl_beta", c.kl_beta);
  f("secot_max_turns", c.secot_max_turns);
  f("secot_resamples", c.secot_resamples);
  f("policy_model", c.policy_model);
  f("temperature", c.temperature);
  f("seed", c.seed);
}

template <class T>
void assign_from_json(T& field, const nlohmann::json& v, std::string_view key) {
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw config_error("BadConfig", std::string(key) + " must be a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw config_error("BadConfig", std::string(key) + " must be a number");
    } else {
      if (!v.is_number_unsigned()) throw config_error("BadConfig", std::string(key) + " must be a non-negative integer");
    }
    field = v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error("BadConfig", std::string(key) + ": " + e.what());
  }
}

template <class T>
void assign_from_text(T& field, std::string_view text, std::string_view key) {
  if constexpr (std::is_same_v<T, std::string>) {
    field = std::string(text);
  } else {
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw config_error("BadConfig", std::string(key) + ": cannot parse '" + std::string(text) + "'");
    }
    assign_from_json(field, v, key);
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  detail::for_each_field(c, [&](const char* key, const auto& field) { j[key] = field; });
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw config_error("BadConfig", "config must be a JSON object");
  RunConfig c;
  std::size_t matched = 0;
  detail::for_each_field(c, [&](const char* key, auto& field) {
    if (auto it = j.find(key); it != j.end()) {
      detail::assign_from_json(field, *it, key);
      ++matched;
    }
  });
  if (matched != j.size()) {
    const auto known = to_json(RunConfig{});
    for (const auto& [key, _] : j.items())
      if (!known.contains(key)) throw config_error("UnknownConfigKey", "unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(jsonl::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw config_error("BadConfig", path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw config_error("BadConfig", e.what());
  }
  return run_config_from_json(j);
}

// Applies one "key=value" override; values are parsed as JSON except for
// string-typed keys, which take the raw text.
inline void apply_override(RunConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw config_error("BadOverride", "expected key=value: " + std::string(assignment));
  const auto key = assignment.substr(0, eq);
  const auto value = assignment.substr(eq + 1);
  bool found = false;
  detail::for_each_field(c, [&](const char* k, auto& field) {
    if (key == k) {
      detail::assign_from_text(field, value, key);
      found = true;
    }
  });
  if (!found) throw config_error("UnknownConfigKey", "unknown config key '" + std::string(key) + "'");
}

inline void write_config_echo(const RunConfig& c, const std::filesystem::path& path) {
  jsonl::write_file(path, to_json(c).dump(2) + "\n");
}

}  // namespace sake
