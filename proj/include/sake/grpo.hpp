#pragma once

// Group-relative advantages, retrieved-token masking and the clipped
// surrogate objective, plus the batch file exchanged with an external
// trainer.
//
// Conventions:
//   advantage  A_i = (r_i - mean(r)) / std(r), sample (n - 1) std;
//              all zeros when every reward in the group is equal
//   objective  (1 / n_unmasked) * sum over unmasked t of
//                min(rho_t A, clip(rho_t, 1 - eps, 1 + eps) A) - beta * k3_t
//              rho_t = exp(logp_new - logp_old)
//              k3_t  = exp(d) - d - 1, d = logp_ref - logp_new   (>= 0)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/jsonl.hpp"
#include "sake/reward.hpp"
#include "sake/rollout.hpp"

namespace sake {

struct AdvantageGroup {
  std::vector<double> rewards;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> advantages;
};

inline AdvantageGroup group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw config_error("GroupTooSmall", "advantage estimation needs a group of >= 2");
  AdvantageGroup g;
  g.rewards.assign(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  g.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  g.advantages.assign(rewards.size(), 0.0);
  const bool degenerate =
      std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
  if (degenerate) return g;
  double ss = 0.0;
  for (double r : rewards) ss += (r - g.mean) * (r - g.mean);
  g.std = std::sqrt(ss / (n - 1.0));
  for (std::size_t i = 0; i < rewards.size(); ++i) g.advantages[i] = (rewards[i] - g.mean) / g.std;
  return g;
}

// Transcript byte range covered by one token.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

using SpanMap = std::vector<TokenSpan>;

// Stand-in tokenization for when the trainer has not supplied one: each
// token is a run of non-space bytes plus trailing spaces, and no token
// crosses a region boundary.
inline SpanMap word_span_map(const Trajectory& t) {
  SpanMap out;
  const std::string_view text = t.transcript;
  for (const auto& r : t.regions) {
    std::size_t i = r.begin;
    while (i < r.end) {
      const std::size_t b = i;
      while (i < r.end && !is_space(text[i])) ++i;
      while (i < r.end && is_space(text[i])) ++i;
      out.push_back({b, i});
    }
  }
  return out;
}

// 1 for tokens inside policy-generated regions, 0 for prompt, retrieved
// evidence and environment feedback. Throws SpanMapMismatch when a token
// leaves the transcript, overlaps its predecessor or straddles a region
// boundary.
inline std::vector<std::uint8_t> mask_trajectory(const Trajectory& t, const SpanMap& spans) {
  auto mismatch = [](std::size_t i, const std::string& why) {
    return validation_error("SpanMapMismatch", "token " + std::to_string(i) + ": " + why);
  };
  std::vector<std::uint8_t> mask;
  mask.reserve(spans.size());
  std::size_t prev_end = 0;
  std::size_t region = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.begin >= s.end) throw mismatch(i, "empty span");
    if (s.end > t.transcript.size()) throw mismatch(i, "beyond transcript");
    if (s.begin < prev_end) throw mismatch(i, "overlaps previous token");
    prev_end = s.end;
    while (region < t.regions.size() && t.regions[region].end <= s.begin) ++region;
    if (region == t.regions.size() || t.regions[region].begin > s.begin) throw mismatch(i, "outside every region");
    if (s.end > t.regions[region].end) throw mismatch(i, "straddles a region boundary");
    mask.push_back(t.regions[region].kind == RegionKind::Generated ? 1 : 0);
  }
  return mask;
}

struct TokenBatch {
  std::vector<double> logp_new;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  std::vector<std::uint8_t> mask;
  std::vector<double> advantage;  // per token, usually one trajectory value broadcast
  double clip_eps = 0.2;
  double kl_beta = 0.001;

  static TokenBatch broadcast(std::vector<double> logp_new, std::vector<double> logp_old,
                              std::vector<double> logp_ref, std::vector<std::uint8_t> mask, double advantage,
                              double clip_eps, double kl_beta) {
    TokenBatch b{std::move(logp_new), std::move(logp_old), std::move(logp_ref), std::move(mask), {}, clip_eps,
                 kl_beta};
    b.advantage.assign(b.mask.size(), advantage);
    return b;
  }
};

inline double kl_k3(double logp_new, double logp_ref) noexcept {
  const double d = logp_ref - logp_new;
  return std::max(0.0, std::expm1(d) - d);
}

inline double clipped_term(double ratio, double advantage, double eps) noexcept {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

inline double surrogate_objective(const TokenBatch& b) {
  const auto n = b.mask.size();
  if (b.logp_new.size() != n || b.logp_old.size() != n || b.logp_ref.size() != n || b.advantage.size() != n)
    throw validation_error("MisalignedBatch", "token arrays differ in length");
  double sum = 0.0;
  std::size_t active = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!b.mask[t]) continue;
    ++active;
    const double ratio = std::exp(b.logp_new[t] - b.logp_old[t]);
    sum += clipped_term(ratio, b.advantage[t], b.clip_eps) - b.kl_beta * kl_k3(b.logp_new[t], b.logp_ref[t]);
  }
  if (active == 0) throw validation_error("AllMasked", "no unmasked tokens");
  return sum / static_cast<double>(active);
}

// ---- trainer batch file ----------------------------------------------------

struct TrainingRecord {
  std::string trajectory_id;
  std::string group_id;
  std::string transcript;
  SpanMap tokens;
  std::vector<std::uint8_t> mask;
  double advantage = 0.0;
  RewardBreakdown reward;
  // Filled by the trainer on the second pass.
  std::optional<std::vector<double>> logp_new, logp_old, logp_ref;

  friend bool operator==(const TrainingRecord& a, const TrainingRecord& b) {
    auto same_reward = [](const RewardBreakdown& x, const RewardBreakdown& y) {
      return x.r_f1 == y.r_f1 && x.r_fmt == y.r_fmt && x.n_search == y.n_search &&
             x.penalty_active == y.penalty_active && x.total == y.total;
    };
    return a.trajectory_id == b.trajectory_id && a.group_id == b.group_id && a.transcript == b.transcript &&
           a.tokens == b.tokens && a.mask == b.mask && a.advantage == b.advantage && same_reward(a.reward, b.reward) &&
           a.logp_new == b.logp_new && a.logp_old == b.logp_old && a.logp_ref == b.logp_ref;
  }
};

inline std::vector<TrainingRecord> emit_training_batch(const std::string& group_id,
                                                       std::span<const Trajectory> group,
                                                       std::span<const RewardBreakdown> rewards,
                                                       std::span<const SpanMap> span_maps) {
  if (group.size() < 2) throw config_error("GroupTooSmall", "a training group needs >= 2 trajectories");
  if (rewards.size() != group.size() || span_maps.size() != group.size())
    throw validation_error("MisalignedGroup", "rewards / span maps do not match the group");
  std::vector<double> totals;
  totals.reserve(rewards.size());
  for (const auto& r : rewards) totals.push_back(r.total);
  const auto adv = group_advantages(totals);

  std::vector<TrainingRecord> out;
  out.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    TrainingRecord rec;
    rec.trajectory_id = group[i].id;
    rec.group_id = group_id;
    rec.transcript = group[i].transcript;
    rec.tokens = span_maps[i];
    rec.mask = mask_trajectory(group[i], span_maps[i]);
    rec.advantage = adv.advantages[i];
    rec.reward = rewards[i];
    out.push_back(std::move(rec));
  }
  return out;
}

// JSONL line. The transcript travels as base64 so arbitrary bytes survive;
// the mask is a string of '0'/'1' characters, one per token.
inline nlohmann::ordered_json to_json(const TrainingRecord& r) {
  nlohmann::ordered_json j;
  j["trajectory_id"] = r.trajectory_id;
  j["group_id"] = r.group_id;
  j["advantage"] = r.advantage;
  j["reward"] = to_json(r.reward);
  j["transcript_b64"] = base64::encode(r.transcript);
  j["tokens"] = nlohmann::ordered_json::array();
  for (const auto& s : r.tokens) j["tokens"].push_back({s.begin, s.end});
  std::string mask;
  mask.reserve(r.mask.size());
  for (auto m : r.mask) mask += m ? '1' : '0';
  j["mask"] = mask;
  if (r.logp_new) j["logp_new"] = *r.logp_new;
  if (r.logp_old) j["logp_old"] = *r.logp_old;
  if (r.logp_ref) j["logp_ref"] = *r.logp_ref;
  return j;
}

inline TrainingRecord training_record_from_json(const nlohmann::json& j) {
  TrainingRecord r;
  r.trajectory_id = j.at("trajectory_id").get<std::string>();
  r.group_id = j.at("group_id").get<std::string>();
  r.advantage = j.at("advantage").get<double>();
  r.reward = reward_from_json(j.at("reward"));
  r.transcript = base64::decode(j.at("transcript_b64").get<std::string>());
  for (const auto& s : j.at("tokens")) r.tokens.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  for (char c : j.at("mask").get<std::string>()) {
    if (c != '0' && c != '1') throw validation_error("BadBatch", "mask must contain only 0/1");
    r.mask.push_back(c == '1' ? 1 : 0);
  }
  if (r.mask.size() != r.tokens.size()) throw validation_error("BadBatch", "mask and tokens differ in length");
  auto read_logp = [&](const char* key, std::optional<std::vector<double>>& dst) {
    if (!j.contains(key)) return;
    dst = j[key].get<std::vector<double>>();
    if (dst->size() != r.tokens.size()) throw validation_error("BadBatch", std::string(key) + " length mismatch");
  };
  read_logp("logp_new", r.logp_new);
  read_logp("logp_old", r.logp_old);
  read_logp("logp_ref", r.logp_ref);
  return r;
}

inline void write_batch(const std::filesystem::path& path, std::span<const TrainingRecord> records) {
  jsonl::Writer w(path);
  for (const auto& r : records) w.write(to_json(r));
}

inline std::vector<TrainingRecord> read_batch(const std::filesystem::path& path) {
  std::vector<TrainingRecord> out;
  for (const auto& j : jsonl::read(path)) out.push_back(training_record_from_json(j));
  return out;
}

// Surrogate for one record once the trainer has filled in log-probs.
inline double record_objective(const TrainingRecord& r, double clip_eps, double kl_beta) {
  if (!r.logp_new || !r.logp_old || !r.logp_ref)
    throw validation_error("MissingLogprobs", r.trajectory_id + ": log-probs not filled in");
  return surrogate_objective(
      TokenBatch::broadcast(*r.logp_new, *r.logp_old, *r.logp_ref, r.mask, r.advantage, clip_eps, kl_beta));
}

}  // namespace sake
