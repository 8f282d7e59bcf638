#pragma once

// Cold-start trajectory construction:
//   1. filter_pool   keep samples carrying a TEXT/IMAGE_SEARCH or NO_SEARCH tag
//   2. synthesize    teacher rollout under a tag-conditioned instruction
//   3. validate      mandatory rule checks, then an optional judge
//
// Records are written as JSONL and double as SFT data: `loss_mask` marks
// teacher-generated byte ranges as supervised and everything injected by the
// environment (prompt, retrieved evidence, feedback) as not.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/policy.hpp"
#include "sake/reward.hpp"
#include "sake/rollout.hpp"
#include "sake/tagger.hpp"
#include "sake/toolgw.hpp"

namespace sake {

struct Verdict {
  bool accepted = false;
  std::string reason;  // empty when accepted
  std::string detail;

  static Verdict accept() { return {true, {}, {}}; }
  static Verdict reject(std::string reason, std::string detail = {}) {
    return {false, std::move(reason), std::move(detail)};
  }
};

namespace reject_reason {
inline constexpr const char* kInfrastructure = "infrastructure";
inline constexpr const char* kTurnBudget = "turn_budget";
inline constexpr const char* kFormat = "format";
inline constexpr const char* kTagConsistency = "tag_consistency";
inline constexpr const char* kLogicalConsistency = "logical_consistency";
inline constexpr const char* kErroneousPrediction = "erroneous_prediction";
inline constexpr const char* kJudge = "judge";
}  // namespace reject_reason

struct SeCoTRecord {
  TaggedSample sample;
  Trajectory trajectory;
  std::string teacher;
  std::optional<Verdict> verdict;  // unset until validated
};

struct SeCoTConfig {
  RolloutConfig rollout;
  std::size_t max_turns = 3;
  std::size_t resamples = 0;  // extra attempts for a rejected sample
  std::uint64_t seed = 0;
};

inline std::vector<TaggedSample> filter_pool(std::span<const TaggedSample> tagged) {
  std::vector<TaggedSample> out;
  for (const auto& t : tagged)
    if (t.has_cold_start_tag()) out.push_back(t);
  return out;
}

// Instruction appended to the teacher prompt. Lists each entity with the
// behavior its tag asks for.
inline std::string tag_instruction(const TaggedSample& t) {
  std::ostringstream os;
  os << "Search tags for this post:\n";
  for (std::size_t i = 0; i < t.sample.entities.size(); ++i) {
    os << "- " << t.sample.entities[i].span << ": ";
    bool first = true;
    for (auto tag : t.entity_tags[i]) {
      os << (first ? "" : "+") << to_string(tag);
      first = false;
    }
    os << '\n';
  }
  os << "For an entity tagged TEXT_SEARCH or IMAGE_SEARCH, say that you are unsure about it and issue the "
        "matching search before answering. For an entity tagged NO_SEARCH, say that you recognise it and answer "
        "without searching for it.\n";
  return os.str();
}

inline RolloutConfig secot_rollout_config(const TaggedSample& t, const SeCoTConfig& cfg) {
  RolloutConfig rc = cfg.rollout;
  rc.instruction += tag_instruction(t);
  return rc;
}

inline std::string secot_trajectory_id(const TaggedSample& t, std::size_t attempt) {
  return attempt == 0 ? "secot/" + t.sample.id : "secot/" + t.sample.id + "#" + std::to_string(attempt);
}

inline SeCoTRecord synthesize(const TaggedSample& sample, Policy& teacher, Tools& tools, const SeCoTConfig& cfg,
                              std::size_t attempt = 0) {
  SeCoTRecord rec;
  rec.sample = sample;
  rec.teacher = teacher.describe();
  const auto id = secot_trajectory_id(sample, attempt);
  const auto seed = mix_seed(cfg.seed, hash_string(id));
  try {
    rec.trajectory = run_rollout(sample.sample.input(), teacher, tools, secot_rollout_config(sample, cfg), id, seed);
  } catch (const RolloutAborted& e) {
    rec.trajectory = e.partial();
    rec.verdict = Verdict::reject(reject_reason::kInfrastructure, e.what());
  }
  return rec;
}

// An entity is covered by a query entry when the entry names it as its
// entity hint, or the query text mentions it (case-insensitive).
inline bool query_covers(const SearchQuery& q, std::string_view span) {
  const auto s = trim(span);
  return to_lower_ascii(trim(q.entity)) == to_lower_ascii(s) || contains_icase(q.q, s);
}

inline bool searched_for(const Trajectory& t, std::string_view span, std::optional<Modality> modality) {
  for (const auto& turn : t.turns) {
    if (!turn.segment || !turn.segment->is_search()) continue;
    const auto& qs = turn.segment->queries();
    if (modality && qs.modality != *modality) continue;
    for (const auto& q : qs.entries)
      if (query_covers(q, span)) return true;
  }
  return false;
}

class Judge {
 public:
  virtual ~Judge() = default;
  // nullopt to accept, otherwise a rejection detail.
  virtual std::optional<std::string> review(const SeCoTRecord& record) = 0;
};

// Asks a policy endpoint for "<verdict>accept</verdict>" or
// "<verdict>reject</verdict>" after showing it the full transcript.
class PolicyJudge final : public Judge {
 public:
  explicit PolicyJudge(std::shared_ptr<Policy> policy) : policy_(std::move(policy)) {}

  std::optional<std::string> review(const SeCoTRecord& record) override {
    GenerateRequest req;
    req.trajectory_id = "judge/" + record.trajectory.id;
    req.history = record.trajectory.transcript +
                  "\n\nReview the trajectory above for format, logical consistency and whether the answer is "
                  "supported by the retrieved evidence. Reply with <verdict>accept</verdict> or "
                  "<verdict>reject</verdict>.\n";
    req.stop_tags = {"</verdict>"};
    const auto text = policy_->generate(req).text;
    if (text.find("<verdict>accept</verdict>") != std::string::npos) return std::nullopt;
    return text;
  }

 private:
  std::shared_ptr<Policy> policy_;
};

// Rule checks, in order: infrastructure, turn budget, format, tag-action
// consistency, logical consistency, answer correctness; then the judge.
inline Verdict validate(const SeCoTRecord& rec, const SeCoTConfig& cfg, Judge* judge = nullptr) {
  using namespace reject_reason;
  if (rec.verdict && !rec.verdict->accepted && rec.verdict->reason == kInfrastructure) return *rec.verdict;
  const auto& t = rec.trajectory;
  const auto& sample = rec.sample;

  if (t.turns.size() > cfg.max_turns)
    return Verdict::reject(kTurnBudget, std::to_string(t.turns.size()) + " turns > " + std::to_string(cfg.max_turns));
  if (!t.all_valid()) return Verdict::reject(kFormat, "trajectory contains an invalid segment");
  if (t.status != TrajectoryStatus::Answered || !t.final) return Verdict::reject(kFormat, "no final answer");

  for (std::size_t i = 0; i < sample.sample.entities.size(); ++i) {
    const auto& span = sample.sample.entities[i].span;
    const auto& tags = sample.entity_tags[i];
    if (tags.count(SearchTag::TextSearch) && !searched_for(t, span, Modality::Text))
      return Verdict::reject(kTagConsistency, "no text search for TEXT_SEARCH entity '" + span + "'");
    if (tags.count(SearchTag::ImageSearch) && !searched_for(t, span, Modality::Image))
      return Verdict::reject(kTagConsistency, "no image search for IMAGE_SEARCH entity '" + span + "'");
    if (tags.count(SearchTag::NoSearch) && searched_for(t, span, std::nullopt))
      return Verdict::reject(kTagConsistency, "searched for NO_SEARCH entity '" + span + "'");
  }

  std::string evidence;
  for (const auto& turn : t.turns) {
    if (turn.observation) evidence += turn.observation->body;
    if (turn.segment && turn.segment->is_search()) {
      for (const auto& q : turn.segment->queries().entries)
        if (!q.entity.empty() && !contains_icase(q.q, trim(q.entity)))
          return Verdict::reject(kLogicalConsistency, "query '" + q.q + "' does not name entity '" + q.entity + "'");
    }
  }
  const auto& final_reason = t.turns.back().segment->reason;
  for (const auto& e : t.final->entities) {
    const bool in_gold = std::any_of(sample.sample.entities.begin(), sample.sample.entities.end(),
                                     [&](const GoldEntity& g) { return span_match(e.span, g.span); });
    if (!in_gold && !contains_icase(final_reason, trim(e.span)) && !contains_icase(evidence, trim(e.span)))
      return Verdict::reject(kLogicalConsistency, "answer entity '" + e.span + "' is not grounded anywhere");
  }

  if (answer_f1(t, sample.sample.entities) != 1.0) return Verdict::reject(kErroneousPrediction, "answer F1 < 1");

  if (judge != nullptr) {
    if (auto why = judge->review(rec)) return Verdict::reject(kJudge, *why);
  }
  return Verdict::accept();
}

// Synthesizes and validates every sample, retrying a rejected sample up to
// cfg.resamples more times. Returns one record per sample (the accepted one,
// or the last rejection).
inline std::vector<SeCoTRecord> build_secot(std::span<const TaggedSample> pool, Policy& teacher, Tools& tools,
                                            const SeCoTConfig& cfg, Judge* judge = nullptr) {
  std::vector<SeCoTRecord> out;
  for (const auto& sample : pool) {
    SeCoTRecord rec;
    for (std::size_t attempt = 0; attempt <= cfg.resamples; ++attempt) {
      rec = synthesize(sample, teacher, tools, cfg, attempt);
      rec.verdict = validate(rec, cfg, judge);
      if (rec.verdict->accepted) break;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- persistence and statistics -------------------------------------------

inline nlohmann::ordered_json to_json(const SeCoTRecord& r) {
  auto j = to_json(r.trajectory);
  j["teacher"] = r.teacher;
  j["sample"] = to_json(r.sample);
  nlohmann::ordered_json v;
  if (r.verdict) {
    v["status"] = r.verdict->accepted ? "accepted" : "rejected";
    if (!r.verdict->accepted) {
      v["reason"] = r.verdict->reason;
      v["detail"] = r.verdict->detail;
    }
  } else {
    v["status"] = "pending";
  }
  j["verdict"] = v;
  j["loss_mask"] = nlohmann::ordered_json::array();
  for (const auto& reg : r.trajectory.regions)
    j["loss_mask"].push_back({reg.begin, reg.end, reg.kind == RegionKind::Generated ? 1 : 0});
  return j;
}

inline SeCoTRecord secot_record_from_json(const nlohmann::json& j) {
  SeCoTRecord r;
  r.trajectory = trajectory_from_json(j);
  r.teacher = j.value("teacher", "");
  r.sample = tagged_sample_from_json(j.at("sample"), 0);
  const auto& v = j.at("verdict");
  const auto status = v.at("status").get<std::string>();
  if (status == "accepted") r.verdict = Verdict::accept();
  else if (status == "rejected") r.verdict = Verdict::reject(v.value("reason", ""), v.value("detail", ""));
  return r;
}

// Search behavior of one trajectory: none, text, image or mixed.
inline std::string search_behavior(const Trajectory& t) {
  bool text = false, image = false;
  for (const auto& turn : t.turns) {
    if (!turn.segment || !turn.segment->is_search()) continue;
    (turn.segment->action == ActionKind::TextSearch ? text : image) = true;
  }
  if (text && image) return "mixed";
  if (text) return "text";
  if (image) return "image";
  return "none";
}

struct SeCoTStats {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::map<std::string, std::size_t> rejected_by_reason;
  std::map<std::size_t, std::size_t> turn_histogram;        // accepted records
  std::map<std::string, std::size_t> search_behaviors;      // accepted records
  std::map<std::string, std::size_t> tag_distribution;      // entities of accepted records
};

inline SeCoTStats secot_stats(std::span<const SeCoTRecord> records) {
  SeCoTStats s;
  for (const auto& r : records) {
    ++s.total;
    if (!r.verdict || !r.verdict->accepted) {
      ++s.rejected_by_reason[r.verdict ? r.verdict->reason : "pending"];
      continue;
    }
    ++s.accepted;
    ++s.turn_histogram[r.trajectory.turns.size()];
    ++s.search_behaviors[search_behavior(r.trajectory)];
    for (const auto& tags : r.sample.entity_tags)
      for (auto tag : tags) ++s.tag_distribution[std::string(to_string(tag))];
  }
  return s;
}

inline std::string render_stats_markdown(const SeCoTStats& s) {
  std::ostringstream os;
  os << "# SeCoT statistics\n\n";
  os << "| records | accepted | rejected |\n|---|---|---|\n";
  os << "| " << s.total << " | " << s.accepted << " | " << s.total - s.accepted << " |\n\n";
  os << "## Rejections\n\n| reason | count |\n|---|---|\n";
  for (const auto& [k, v] : s.rejected_by_reason) os << "| " << k << " | " << v << " |\n";
  os << "\n## Turns per accepted record\n\n| turns | count |\n|---|---|\n";
  for (const auto& [k, v] : s.turn_histogram) os << "| " << k << " | " << v << " |\n";
  os << "\n## Search behavior\n\n| behavior | count |\n|---|---|\n";
  for (const auto& [k, v] : s.search_behaviors) os << "| " << k << " | " << v << " |\n";
  os << "\n## Entity tags\n\n| tag | count |\n|---|---|\n";
  for (const auto& [k, v] : s.tag_distribution) os << "| " << k << " | " << v << " |\n";
  return os.str();
}

}  // namespace sake
