#pragma once

// Multi-turn reason -> act -> observe loop.
//
//   history = prompt
//   while tool_calls < max_actions:
//     y = policy(history)                  // one segment, ends at a closing action tag
//     search  -> obs = tools(y); history += y + <information>obs</information>; ++tool_calls
//     answer  -> done (Answered)
//     invalid -> history += y + "Invalid Action. Please retry."
//                (more than max_invalid_retries invalid segments -> Invalid)
//   -> BudgetExhausted, no final answer
//
// The transcript is append-only; `regions` records which byte ranges were
// produced by the policy and which were injected by the environment.

#include <future>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/policy.hpp"
#include "sake/protocol.hpp"
#include "sake/toolgw.hpp"

namespace sake {

inline constexpr std::string_view kInvalidActionFeedback = "Invalid Action. Please retry.";

struct RolloutConfig {
  std::size_t max_actions = 3;
  std::size_t max_invalid_retries = 3;
  std::size_t max_response_tokens = 18432;
  // "{text}" and "{image}" are substituted; the result follows `instruction`.
  std::string prompt_template = "Image: {image}\nText: {text}\n";
  std::string instruction;

  void validate() const {
    if (max_actions < 1) throw config_error("BadConfig", "max_actions must be >= 1");
    if (max_response_tokens < 1) throw config_error("BadConfig", "max_response_tokens must be >= 1");
  }
};

struct RolloutInput {
  std::string id;
  std::string text;
  std::string image_ref;  // path or URL, never bytes
};

enum class TrajectoryStatus { Answered, BudgetExhausted, Invalid };

inline std::string_view to_string(TrajectoryStatus s) noexcept {
  switch (s) {
    case TrajectoryStatus::Answered: return "answered";
    case TrajectoryStatus::BudgetExhausted: return "budget_exhausted";
    case TrajectoryStatus::Invalid: return "invalid";
  }
  return "?";
}

inline TrajectoryStatus status_from_string(std::string_view s) {
  if (s == "answered") return TrajectoryStatus::Answered;
  if (s == "budget_exhausted") return TrajectoryStatus::BudgetExhausted;
  if (s == "invalid") return TrajectoryStatus::Invalid;
  throw validation_error("BadTrajectory", "unknown status '" + std::string(s) + "'");
}

enum class RegionKind { Prompt, Generated, Observation, Feedback };

inline std::string_view to_string(RegionKind k) noexcept {
  switch (k) {
    case RegionKind::Prompt: return "prompt";
    case RegionKind::Generated: return "generated";
    case RegionKind::Observation: return "observation";
    case RegionKind::Feedback: return "feedback";
  }
  return "?";
}

inline RegionKind region_kind_from_string(std::string_view s) {
  if (s == "prompt") return RegionKind::Prompt;
  if (s == "generated") return RegionKind::Generated;
  if (s == "observation") return RegionKind::Observation;
  if (s == "feedback") return RegionKind::Feedback;
  throw validation_error("BadTrajectory", "unknown region kind '" + std::string(s) + "'");
}

// Half-open byte range [begin, end) of the transcript.
struct Region {
  RegionKind kind = RegionKind::Prompt;
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const Region&, const Region&) = default;
};

struct Turn {
  std::string raw;
  std::size_t token_count = 0;
  std::optional<TurnSegment> segment;  // set iff the segment was valid
  std::string error;                   // ProtocolErrc name or "ResponseTooLong"
  std::size_t error_offset = 0;
  std::optional<Observation> observation;

  bool valid() const noexcept { return segment.has_value(); }
};

struct Trajectory {
  std::string id;
  RolloutInput input;
  std::uint64_t seed = 0;
  std::vector<Turn> turns;
  std::optional<AnswerPayload> final;
  TrajectoryStatus status = TrajectoryStatus::BudgetExhausted;
  std::size_t n_tool_calls = 0;
  std::string transcript;
  std::vector<Region> regions;

  std::size_t n_invalid() const noexcept {
    std::size_t n = 0;
    for (const auto& t : turns) n += t.valid() ? 0 : 1;
    return n;
  }
  bool all_valid() const noexcept { return n_invalid() == 0; }
};

// Infrastructure failure mid-rollout. The partial trajectory is attached;
// it must not be used for training.
class RolloutAborted : public Error {
 public:
  RolloutAborted(std::string code, const std::string& what, Trajectory partial)
      : Error(ErrorKind::Upstream, std::move(code), what), partial_(std::move(partial)) {}
  const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

inline std::string render_prompt(const RolloutConfig& cfg, const RolloutInput& input) {
  std::string body = cfg.prompt_template;
  auto substitute = [&body](std::string_view key, const std::string& value) {
    for (auto pos = body.find(key); pos != std::string::npos; pos = body.find(key, pos + value.size()))
      body.replace(pos, key.size(), value);
  };
  substitute("{image}", input.image_ref);
  substitute("{text}", input.text);
  return cfg.instruction + body;
}

namespace detail {

inline void append_region(Trajectory& t, RegionKind kind, std::string_view text) {
  if (text.empty()) return;
  const auto begin = t.transcript.size();
  t.transcript += text;
  t.regions.push_back({kind, begin, t.transcript.size()});
}

}  // namespace detail

inline Trajectory run_rollout(const RolloutInput& input, Policy& policy, Tools& tools, const RolloutConfig& cfg,
                              std::string trajectory_id = {}, std::uint64_t seed = 0) {
  cfg.validate();
  Trajectory traj;
  traj.id = trajectory_id.empty() ? input.id : std::move(trajectory_id);
  traj.input = input;
  traj.seed = seed;
  detail::append_region(traj, RegionKind::Prompt, render_prompt(cfg, input));

  std::size_t invalid = 0;
  while (traj.n_tool_calls < cfg.max_actions) {
    GenerateRequest req;
    req.trajectory_id = traj.id;
    req.history = traj.transcript;
    if (!input.image_ref.empty()) req.images.push_back(input.image_ref);
    req.max_tokens = cfg.max_response_tokens;
    req.seed = mix_seed(seed, traj.turns.size());

    Generation gen;
    try {
      gen = policy.generate(req);
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      throw RolloutAborted(err ? err->code() : "PolicyUnavailable", e.what(), std::move(traj));
    }

    Turn turn;
    turn.raw = gen.text;
    turn.token_count = gen.token_count;
    detail::append_region(traj, RegionKind::Generated, turn.raw);

    std::optional<TurnSegment> seg;
    if (gen.token_count > cfg.max_response_tokens) {
      turn.error = "ResponseTooLong";
    } else {
      auto parsed = parse_segment(turn.raw);
      if (parsed) {
        seg = std::move(*parsed);
      } else {
        turn.error = std::string(to_string(parsed.error().code));
        turn.error_offset = parsed.error().offset;
      }
    }

    if (!seg) {
      ++invalid;
      traj.turns.push_back(std::move(turn));
      if (invalid > cfg.max_invalid_retries) {
        traj.status = TrajectoryStatus::Invalid;
        return traj;
      }
      detail::append_region(traj, RegionKind::Feedback, "\n" + std::string(kInvalidActionFeedback) + "\n");
      continue;
    }

    if (seg->action == ActionKind::Answer) {
      traj.final = seg->answer();
      turn.segment = std::move(seg);
      traj.turns.push_back(std::move(turn));
      traj.status = TrajectoryStatus::Answered;
      return traj;
    }

    Observation obs;
    try {
      obs = tools.execute(seg->queries());
    } catch (const std::exception& e) {
      turn.segment = std::move(seg);
      traj.turns.push_back(std::move(turn));
      throw RolloutAborted("ToolUnavailable", e.what(), std::move(traj));
    }
    detail::append_region(traj, RegionKind::Observation, "\n" + serialize_observation(obs) + "\n");
    turn.segment = std::move(seg);
    turn.observation = std::move(obs);
    traj.turns.push_back(std::move(turn));
    ++traj.n_tool_calls;
  }
  traj.status = TrajectoryStatus::BudgetExhausted;
  return traj;
}

inline std::string member_id(const std::string& input_id, std::size_t i) {
  return input_id + "#" + std::to_string(i);
}

// G rollouts of the same input. Member i is "<input.id>#i" with seed
// mix_seed(seed, i), so results do not depend on execution order.
inline std::vector<Trajectory> run_group(const RolloutInput& input, Policy& policy, Tools& tools,
                                         const RolloutConfig& cfg, std::size_t group_size, std::uint64_t seed,
                                         bool parallel = false) {
  if (group_size < 2) throw config_error("GroupTooSmall", "group size must be >= 2");
  std::vector<Trajectory> out;
  out.reserve(group_size);
  if (!parallel) {
    for (std::size_t i = 0; i < group_size; ++i)
      out.push_back(run_rollout(input, policy, tools, cfg, member_id(input.id, i), mix_seed(seed, i)));
    return out;
  }
  std::vector<std::future<Trajectory>> futures;
  futures.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      return run_rollout(input, policy, tools, cfg, member_id(input.id, i), mix_seed(seed, i));
    }));
  }
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

// ---- persistence -----------------------------------------------------------

inline nlohmann::ordered_json to_json(const RolloutInput& in) {
  nlohmann::ordered_json j;
  j["id"] = in.id;
  j["text"] = in.text;
  j["image_ref"] = in.image_ref;
  return j;
}

inline RolloutInput rollout_input_from_json(const nlohmann::json& j, const std::string& fallback_id = {}) {
  RolloutInput in;
  in.id = j.value("id", fallback_id);
  in.text = j.value("text", "");
  in.image_ref = j.value("image_ref", "");
  if (in.id.empty()) throw validation_error("BadInput", "input record has no id");
  return in;
}

inline nlohmann::ordered_json to_json(const Trajectory& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["input"] = to_json(t.input);
  j["seed"] = t.seed;
  j["status"] = std::string(to_string(t.status));
  j["n_tool_calls"] = t.n_tool_calls;
  j["final"] = t.final ? to_json(*t.final) : nlohmann::ordered_json();
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& turn : t.turns) {
    nlohmann::ordered_json tj;
    tj["raw"] = turn.raw;
    tj["token_count"] = turn.token_count;
    tj["valid"] = turn.valid();
    if (turn.valid()) {
      tj["action"] = std::string(to_string(turn.segment->action));
    } else {
      tj["error"] = turn.error;
      tj["error_offset"] = turn.error_offset;
    }
    if (turn.observation) {
      tj["observation"] = {{"modality", std::string(to_string(turn.observation->source_modality))},
                           {"body", turn.observation->body}};
    }
    j["turns"].push_back(std::move(tj));
  }
  j["transcript"] = t.transcript;
  j["regions"] = nlohmann::ordered_json::array();
  for (const auto& r : t.regions) j["regions"].push_back({std::string(to_string(r.kind)), r.begin, r.end});
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.id = j.at("id").get<std::string>();
  t.input = rollout_input_from_json(j.at("input"));
  t.seed = j.value("seed", std::uint64_t{0});
  t.status = status_from_string(j.at("status").get<std::string>());
  t.n_tool_calls = j.at("n_tool_calls").get<std::size_t>();
  if (!j.at("final").is_null()) t.final = answer_from_json(j["final"]);
  for (const auto& tj : j.at("turns")) {
    Turn turn;
    turn.raw = tj.at("raw").get<std::string>();
    turn.token_count = tj.value("token_count", std::size_t{0});
    if (tj.value("valid", false)) {
      auto parsed = parse_segment(turn.raw);
      if (!parsed) throw validation_error("BadTrajectory", t.id + ": turn marked valid does not parse");
      turn.segment = std::move(*parsed);
    } else {
      turn.error = tj.value("error", "");
      turn.error_offset = tj.value("error_offset", std::size_t{0});
    }
    if (tj.contains("observation")) {
      const auto& o = tj["observation"];
      turn.observation = Observation{o.at("body").get<std::string>(),
                                     modality_from_string(o.at("modality").get<std::string>())};
    }
    t.turns.push_back(std::move(turn));
  }
  t.transcript = j.at("transcript").get<std::string>();
  for (const auto& r : j.at("regions")) {
    Region reg{region_kind_from_string(r.at(0).get<std::string>()), r.at(1).get<std::size_t>(),
               r.at(2).get<std::size_t>()};
    if (reg.begin > reg.end || reg.end > t.transcript.size())
      throw validation_error("BadTrajectory", t.id + ": region out of range");
    t.regions.push_back(reg);
  }
  return t;
}

}  // namespace sake
