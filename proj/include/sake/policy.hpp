#pragma once

// "The model" as seen by the rollout engine: text in, one segment out.
//
// Backends:
//   ScriptedPolicy  fixture JSONL {trajectory_id, turn_index, text}
//   ReplayPolicy    generated segments of stored trajectories
//   RemotePolicy    HTTP chat-style endpoint (policy_remote.hpp)
//
// Every backend truncates its output at the first closing stop tag, so the
// engine sees the same text whether or not a remote server honoured `stop`.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/jsonl.hpp"
#include "sake/protocol.hpp"

namespace sake {

struct GenerateRequest {
  std::string trajectory_id;
  std::string history;
  std::vector<std::string> images;
  std::vector<std::string> stop_tags = default_stop_tags();
  std::size_t max_tokens = 18432;
  std::uint64_t seed = 0;
};

struct Generation {
  std::string text;
  std::size_t token_count = 0;
};

// Length proxy for backends that cannot report a real token count:
// whitespace-delimited words.
inline std::size_t word_count(std::string_view text) noexcept {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool sp = is_space(c);
    if (!sp && !in_word) ++n;
    in_word = !sp;
  }
  return n;
}

class Policy {
 public:
  virtual ~Policy() = default;

  // Throws Error{Upstream, "EndpointTimeout"|"PolicyUnavailable"} or
  // Error{Upstream, "FixtureExhausted"}.
  virtual Generation generate(const GenerateRequest& request) = 0;

  // n independent samples for the same prompt. Sample i uses seed
  // mix_seed(request.seed, i).
  virtual std::vector<std::string> sample_n(const GenerateRequest& request, std::size_t n) {
    if (n == 0) throw config_error("BadSampleCount", "sample_n requires n >= 1");
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      GenerateRequest r = request;
      r.seed = mix_seed(request.seed, i);
      out.push_back(generate(r).text);
    }
    return out;
  }

  // Rewinds per-trajectory cursors, for backends that have them.
  virtual void reset() {}

  virtual std::string describe() const = 0;
};

inline Error fixture_exhausted(const std::string& id) {
  return upstream_error("FixtureExhausted", "no more scripted turns for trajectory '" + id + "'");
}

// Fixture lookup falls back from the exact trajectory id, to the id with any
// "#member" suffix stripped, to the wildcard "*". Each requested id keeps its
// own cursor. Several lines with the same (trajectory_id, turn_index) are
// alternatives; one is drawn per call from the request seed.
class ScriptedPolicy final : public Policy {
 public:
  struct Line {
    std::string trajectory_id;
    std::size_t turn_index = 0;
    std::string text;
  };

  explicit ScriptedPolicy(std::vector<Line> lines, std::string name = "scripted") : name_(std::move(name)) {
    for (auto& l : lines) script_[l.trajectory_id][l.turn_index].push_back(std::move(l.text));
  }

  static std::unique_ptr<ScriptedPolicy> from_file(const std::filesystem::path& path) {
    std::vector<Line> lines;
    for (const auto& j : jsonl::read(path)) {
      if (!j.is_object() || !j.contains("trajectory_id") || !j.contains("turn_index") || !j.contains("text") ||
          !j["trajectory_id"].is_string() || !j["turn_index"].is_number_unsigned() || !j["text"].is_string())
        throw validation_error("BadFixture", path.string() + ": expected {trajectory_id, turn_index, text}");
      lines.push_back({j["trajectory_id"].get<std::string>(), j["turn_index"].get<std::size_t>(),
                       j["text"].get<std::string>()});
    }
    return std::make_unique<ScriptedPolicy>(std::move(lines), "scripted:" + path.string());
  }

  Generation generate(const GenerateRequest& request) override {
    const auto* turns = resolve(request.trajectory_id);
    if (turns == nullptr) throw fixture_exhausted(request.trajectory_id);
    std::size_t position;
    {
      std::lock_guard lock(mu_);
      position = cursor_[request.trajectory_id]++;
    }
    if (position >= turns->size()) throw fixture_exhausted(request.trajectory_id);
    auto it = turns->begin();
    std::advance(it, static_cast<std::ptrdiff_t>(position));
    const auto& alternatives = it->second;
    std::size_t pick = 0;
    if (alternatives.size() > 1) {
      std::mt19937_64 rng(mix_seed(request.seed, hash_string(request.trajectory_id) ^ position));
      pick = std::uniform_int_distribution<std::size_t>(0, alternatives.size() - 1)(rng);
    }
    std::string text = truncate_at_stop(alternatives[pick], request.stop_tags);
    const auto tokens = word_count(text);
    return {std::move(text), tokens};
  }

  void reset() override {
    std::lock_guard lock(mu_);
    cursor_.clear();
  }

  std::string describe() const override { return name_; }

 private:
  using Turns = std::map<std::size_t, std::vector<std::string>>;

  const Turns* resolve(const std::string& id) const {
    if (auto it = script_.find(id); it != script_.end()) return &it->second;
    if (auto hash = id.find('#'); hash != std::string::npos) {
      if (auto it = script_.find(id.substr(0, hash)); it != script_.end()) return &it->second;
    }
    if (auto it = script_.find("*"); it != script_.end()) return &it->second;
    return nullptr;
  }

  std::string name_;
  std::unordered_map<std::string, Turns> script_;
  std::mutex mu_;
  std::unordered_map<std::string, std::size_t> cursor_;
};

// Serves the generated segments of previously recorded trajectories, in
// order, keyed by trajectory id.
class ReplayPolicy final : public Policy {
 public:
  struct Recorded {
    std::string text;
    std::size_t token_count = 0;
  };

  explicit ReplayPolicy(std::unordered_map<std::string, std::vector<Recorded>> log, std::string name = "replay")
      : name_(std::move(name)), log_(std::move(log)) {}

  // Accepts trajectory JSONL (rollout records) or SeCoT record JSONL; both
  // carry "id" and "turns":[{"raw", "token_count"}].
  static std::unique_ptr<ReplayPolicy> from_file(const std::filesystem::path& path) {
    std::unordered_map<std::string, std::vector<Recorded>> log;
    for (const auto& j : jsonl::read(path)) {
      if (!j.contains("id") || !j.contains("turns") || !j["turns"].is_array())
        throw validation_error("BadReplayLog", path.string() + ": records need id and turns");
      auto& turns = log[j["id"].get<std::string>()];
      for (const auto& t : j["turns"])
        turns.push_back({t.at("raw").get<std::string>(), t.value("token_count", std::size_t{0})});
    }
    return std::make_unique<ReplayPolicy>(std::move(log), "replay:" + path.string());
  }

  Generation generate(const GenerateRequest& request) override {
    auto it = log_.find(request.trajectory_id);
    if (it == log_.end()) throw fixture_exhausted(request.trajectory_id);
    std::size_t position;
    {
      std::lock_guard lock(mu_);
      position = cursor_[request.trajectory_id]++;
    }
    if (position >= it->second.size()) throw fixture_exhausted(request.trajectory_id);
    const auto& rec = it->second[position];
    return {truncate_at_stop(rec.text, request.stop_tags), rec.token_count};
  }

  void reset() override {
    std::lock_guard lock(mu_);
    cursor_.clear();
  }

  std::string describe() const override { return name_; }

 private:
  std::string name_;
  std::unordered_map<std::string, std::vector<Recorded>> log_;
  std::mutex mu_;
  std::unordered_map<std::string, std::size_t> cursor_;
};

}  // namespace sake
