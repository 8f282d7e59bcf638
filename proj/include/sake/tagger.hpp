#pragma once

// Difficulty-aware search tags.
//
// For each gold entity and N sampled prediction sets:
//   hit_text   = #samples predicting (span, type) exactly
//   hit_region = #samples predicting the span with a box of IoU > threshold
//                (span only; the type is not checked, matching the hit
//                definition this tag scheme is built on)
// Tag:
//   hit_text == 0 or hit_region == 0  -> TEXT_SEARCH (if hit_text == 0)
//                                        + IMAGE_SEARCH (if hit_region == 0)
//   hit_text == N and hit_region == N -> NO_SEARCH
//   otherwise                         -> ADAPTIVE

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/entity.hpp"
#include "sake/metrics.hpp"
#include "sake/policy.hpp"
#include "sake/protocol.hpp"
#include "sake/rollout.hpp"

namespace sake {

enum class SearchTag { TextSearch, ImageSearch, NoSearch, Adaptive };

inline std::string_view to_string(SearchTag t) noexcept {
  switch (t) {
    case SearchTag::TextSearch: return "TEXT_SEARCH";
    case SearchTag::ImageSearch: return "IMAGE_SEARCH";
    case SearchTag::NoSearch: return "NO_SEARCH";
    case SearchTag::Adaptive: return "ADAPTIVE";
  }
  return "?";
}

inline SearchTag search_tag_from_string(std::string_view s) {
  if (s == "TEXT_SEARCH") return SearchTag::TextSearch;
  if (s == "IMAGE_SEARCH") return SearchTag::ImageSearch;
  if (s == "NO_SEARCH") return SearchTag::NoSearch;
  if (s == "ADAPTIVE") return SearchTag::Adaptive;
  throw validation_error("BadTag", "unknown search tag '" + std::string(s) + "'");
}

using TagSet = std::set<SearchTag>;

inline bool is_search_tagged(const TagSet& t) noexcept {
  return t.count(SearchTag::TextSearch) > 0 || t.count(SearchTag::ImageSearch) > 0;
}
inline bool is_cold_start_tagged(const TagSet& t) noexcept {
  return is_search_tagged(t) || t.count(SearchTag::NoSearch) > 0;
}

struct HitCounts {
  std::size_t hit_text = 0;
  std::size_t hit_region = 0;
  std::size_t n = 0;

  bool valid() const noexcept { return n >= 1 && hit_text <= n && hit_region <= n; }
  friend bool operator==(const HitCounts&, const HitCounts&) = default;
};

// One sampled prediction set per forward sample.
using PredictionSet = std::vector<Entity>;

inline HitCounts hit_counts(const GoldEntity& gold, std::span<const PredictionSet> samples,
                            double iou_threshold = kDefaultIouThreshold) {
  if (samples.empty()) throw validation_error("EmptySamples", "hit counting needs at least one sample");
  HitCounts c;
  c.n = samples.size();
  for (const auto& sample : samples) {
    bool text_hit = false;
    bool region_hit = false;
    for (const auto& p : sample) {
      if (!span_match(p.span, gold.span)) continue;
      text_hit = text_hit || p.type == gold.type;
      region_hit = region_hit || region_match(p.region, gold.boxes, iou_threshold);
    }
    c.hit_text += text_hit ? 1 : 0;
    c.hit_region += region_hit ? 1 : 0;
  }
  return c;
}

inline TagSet assign_tag(const HitCounts& c) {
  if (!c.valid()) throw validation_error("BadHitCounts", "hit counts out of range");
  if (c.hit_text == 0 || c.hit_region == 0) {
    TagSet tags;
    if (c.hit_text == 0) tags.insert(SearchTag::TextSearch);
    if (c.hit_region == 0) tags.insert(SearchTag::ImageSearch);
    return tags;
  }
  if (c.hit_text == c.n && c.hit_region == c.n) return {SearchTag::NoSearch};
  return {SearchTag::Adaptive};
}

struct GoldSample {
  std::string id;
  std::string text;
  std::string image_ref;
  std::vector<GoldEntity> entities;

  RolloutInput input() const { return {id, text, image_ref}; }
};

inline GoldSample gold_sample_from_json(const nlohmann::json& j, std::size_t line_index) {
  GoldSample s;
  s.id = j.value("id", "post-" + std::to_string(line_index));
  s.text = j.value("text", "");
  s.image_ref = j.value("image_ref", "");
  if (!j.contains("entities") || !j["entities"].is_array())
    throw validation_error("BadGold", s.id + ": entities must be an array");
  for (const auto& e : j["entities"]) s.entities.push_back(gold_entity_from_json(e));
  return s;
}

inline nlohmann::ordered_json to_json(const GoldSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["text"] = s.text;
  j["image_ref"] = s.image_ref;
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : s.entities) j["entities"].push_back(to_json(e));
  return j;
}

inline std::vector<GoldSample> read_gold(const std::filesystem::path& path) {
  std::vector<GoldSample> out;
  const auto rows = jsonl::read(path);
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(gold_sample_from_json(rows[i], i));
  return out;
}

struct SearchTagReport {
  std::string sample_id;
  std::size_t entity_index = 0;
  GoldEntity entity;
  HitCounts counts;
  TagSet tags;
};

inline nlohmann::ordered_json tags_to_json(const TagSet& tags) {
  auto arr = nlohmann::ordered_json::array();
  for (auto t : tags) arr.push_back(std::string(to_string(t)));
  return arr;
}

inline TagSet tags_from_json(const nlohmann::json& j) {
  TagSet tags;
  for (const auto& t : j) tags.insert(search_tag_from_string(t.get<std::string>()));
  return tags;
}

inline nlohmann::ordered_json to_json(const SearchTagReport& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["entity_index"] = r.entity_index;
  j["entity"] = to_json(r.entity);
  j["hit_text"] = r.counts.hit_text;
  j["hit_region"] = r.counts.hit_region;
  j["n"] = r.counts.n;
  j["tags"] = tags_to_json(r.tags);
  return j;
}

// A gold sample with the tag set of each of its entities, as written to the
// pool manifests and consumed by SeCoT synthesis.
struct TaggedSample {
  GoldSample sample;
  std::vector<TagSet> entity_tags;  // parallel to sample.entities

  bool has_cold_start_tag() const {
    return std::any_of(entity_tags.begin(), entity_tags.end(), is_cold_start_tagged);
  }
  bool has_adaptive_tag() const {
    return std::any_of(entity_tags.begin(), entity_tags.end(),
                       [](const TagSet& t) { return t.count(SearchTag::Adaptive) > 0; });
  }
};

inline nlohmann::ordered_json to_json(const TaggedSample& t) {
  auto j = to_json(t.sample);
  for (std::size_t i = 0; i < t.entity_tags.size(); ++i) j["entities"][i]["tags"] = tags_to_json(t.entity_tags[i]);
  return j;
}

inline TaggedSample tagged_sample_from_json(const nlohmann::json& j, std::size_t line_index) {
  TaggedSample t;
  t.sample = gold_sample_from_json(j, line_index);
  for (const auto& e : j["entities"]) {
    if (!e.contains("tags")) throw validation_error("BadManifest", t.sample.id + ": entity without tags");
    t.entity_tags.push_back(tags_from_json(e["tags"]));
  }
  return t;
}

inline std::vector<TaggedSample> read_tagged(const std::filesystem::path& path) {
  std::vector<TaggedSample> out;
  const auto rows = jsonl::read(path);
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(tagged_sample_from_json(rows[i], i));
  return out;
}

struct TagDatasetResult {
  std::vector<SearchTagReport> reports;
  std::vector<TaggedSample> cold_start_pool;  // any entity tagged *_SEARCH or NO_SEARCH
  std::vector<TaggedSample> rl_pool;          // any entity tagged ADAPTIVE
};

// Extracts the entity set from one sampled answer segment. Samples that do
// not parse as an answer turn count as empty predictions.
inline PredictionSet prediction_from_sample(std::string_view text) {
  auto parsed = parse_segment(text);
  if (!parsed || parsed->action != ActionKind::Answer) return {};
  return parsed->answer().entities;
}

struct TaggerConfig {
  std::size_t n = 4;  // difficulty level
  double iou_threshold = kDefaultIouThreshold;
  std::uint64_t seed = 0;
  RolloutConfig prompt;  // only the prompt fields are used
};

inline TagDatasetResult tag_dataset(std::span<const GoldSample> corpus, Policy& policy, const TaggerConfig& cfg) {
  if (cfg.n < 1) throw config_error("BadDifficulty", "difficulty level N must be >= 1");
  TagDatasetResult out;
  for (const auto& sample : corpus) {
    GenerateRequest req;
    req.trajectory_id = "tag/" + sample.id;
    req.history = render_prompt(cfg.prompt, sample.input());
    if (!sample.image_ref.empty()) req.images.push_back(sample.image_ref);
    req.seed = mix_seed(cfg.seed, hash_string(sample.id));
    std::vector<PredictionSet> predictions;
    for (const auto& text : policy.sample_n(req, cfg.n)) predictions.push_back(prediction_from_sample(text));

    TaggedSample tagged{sample, {}};
    for (std::size_t i = 0; i < sample.entities.size(); ++i) {
      SearchTagReport r;
      r.sample_id = sample.id;
      r.entity_index = i;
      r.entity = sample.entities[i];
      r.counts = hit_counts(sample.entities[i], predictions, cfg.iou_threshold);
      r.tags = assign_tag(r.counts);
      tagged.entity_tags.push_back(r.tags);
      out.reports.push_back(std::move(r));
    }
    if (tagged.has_cold_start_tag()) out.cold_start_pool.push_back(tagged);
    if (tagged.has_adaptive_tag()) out.rl_pool.push_back(tagged);
  }
  return out;
}

}  // namespace sake
