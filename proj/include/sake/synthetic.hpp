#pragma once

// Deterministic synthetic corpus: posts with invented entities, a keyword
// index that knows about every entity, and scripted policy fixtures for the
// tagging, cold-start and RL stages. Everything is derived from integer
// formulas so the generated files are byte-stable.
//
// Also holds TabularSearchPolicy, a one-parameter-per-post policy trained
// with group-relative advantages on the same environment.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sake/grpo.hpp"
#include "sake/jsonl.hpp"
#include "sake/metrics.hpp"
#include "sake/policy.hpp"
#include "sake/protocol.hpp"
#include "sake/reward.hpp"
#include "sake/rollout.hpp"
#include "sake/tagger.hpp"
#include "sake/toolgw.hpp"

namespace sake::synthetic {

inline constexpr std::size_t kPosts = 20;
inline constexpr std::size_t kEntitiesPerPost = 2;
inline constexpr std::size_t kDifficulty = 4;  // N the tag fixture is written for

struct PlannedEntity {
  GoldEntity gold;
  std::size_t text_hits = 0;    // tag samples that get span and type right
  std::size_t region_hits = 0;  // tag samples that get span and region right
};

struct PlannedPost {
  GoldSample sample;
  std::vector<PlannedEntity> entities;
};

namespace detail {

inline constexpr std::array<const char*, 16> kSyllables = {"vor", "kel", "ama", "dru", "sen", "tia", "oru", "bex",
                                                           "lun", "qir", "mab", "zet", "fia", "nol", "hes", "gra"};
inline constexpr std::array<const char*, 4> kTypes = {"PER", "LOC", "ORG", "OTHER"};

// (text_hits, region_hits) per entity, cycled. Covers every tag outcome for N=4.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, 10> kDifficultyCycle = {
    {{4, 4}, {0, 4}, {4, 0}, {2, 3}, {4, 4}, {1, 4}, {0, 0}, {3, 3}, {4, 2}, {4, 4}}};

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string entity_name(std::size_t e, const std::string& type) {
  const auto syl = [&](std::size_t k) { return std::string(kSyllables[(e * 5 + k * 7 + e / 16) % kSyllables.size()]); };
  const std::string a = capitalize(syl(0) + syl(1));
  const std::string b = capitalize(syl(2) + syl(3));
  if (type == "PER") return a + " " + b;
  if (type == "LOC") return "Port " + a;
  if (type == "ORG") return a + " Works";
  return a + " Cup";
}

inline BBox entity_box(std::size_t e) {
  const double x1 = 20.0 + static_cast<double>((e * 37) % 400);
  const double y1 = 20.0 + static_cast<double>((e * 53) % 300);
  const double w = 80.0 + static_cast<double>((e * 11) % 120);
  const double h = 60.0 + static_cast<double>((e * 13) % 100);
  return {x1, y1, x1 + w, y1 + h};
}

// A box with IoU 0 against `b`.
inline BBox displaced(const BBox& b) {
  const double dx = (b.x2 - b.x1) + 10.0;
  return {b.x1 + dx, b.y1, b.x2 + dx, b.y2};
}

inline std::string other_type(const std::string& type) {
  for (std::size_t i = 0; i < kTypes.size(); ++i)
    if (type == kTypes[i]) return kTypes[(i + 1) % kTypes.size()];
  return kTypes[0];
}

inline std::optional<BBox> first_box(const GoldEntity& g) {
  if (g.boxes.empty()) return std::nullopt;
  return g.boxes.front();
}

inline Entity as_prediction(const GoldEntity& g) { return {g.span, g.type, first_box(g)}; }

inline std::string post_text(std::size_t p, const std::string& a, const std::string& b) {
  switch (p % 4) {
    case 0:
      return "Great evening with " + a + " and " + b + " tonight!";
    case 1:
      return a + " just announced a new partnership with " + b + ".";
    case 2:
      return "Spotted " + a + " near " + b + " this morning";
    default:
      return "Can't believe " + a + " beat " + b + " again #weekend";
  }
}

inline std::string answer_turn(const std::string& reason, const std::vector<Entity>& entities) {
  TurnSegment s;
  s.reason = reason;
  s.action = ActionKind::Answer;
  s.payload = AnswerPayload{entities};
  return serialize_segment(s);
}

inline std::string search_turn(const std::string& reason, Modality m, const std::vector<std::string>& spans) {
  TurnSegment s;
  s.reason = reason;
  s.action = m == Modality::Text ? ActionKind::TextSearch : ActionKind::ImageSearch;
  SearchQuerySet q;
  q.modality = m;
  for (const auto& span : spans) q.entries.push_back({span, m == Modality::Text ? span : span + " photo"});
  s.payload = std::move(q);
  return serialize_segment(s);
}

inline nlohmann::ordered_json fixture_line(const std::string& id, std::size_t turn, const std::string& text) {
  nlohmann::ordered_json j;
  j["trajectory_id"] = id;
  j["turn_index"] = turn;
  j["text"] = text;
  return j;
}

}  // namespace detail

inline std::vector<PlannedPost> plan() {
  std::vector<PlannedPost> posts;
  for (std::size_t p = 0; p < kPosts; ++p) {
    PlannedPost post;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < kEntitiesPerPost; ++k) {
      const std::size_t e = p * kEntitiesPerPost + k;
      PlannedEntity pe;
      pe.gold.type = detail::kTypes[(e * 3 + p) % detail::kTypes.size()];
      pe.gold.span = detail::entity_name(e, pe.gold.type);
      if (e % 5 != 4) pe.gold.boxes.push_back(detail::entity_box(e));
      std::tie(pe.text_hits, pe.region_hits) = detail::kDifficultyCycle[e % detail::kDifficultyCycle.size()];
      names.push_back(pe.gold.span);
      post.sample.entities.push_back(pe.gold);
      post.entities.push_back(std::move(pe));
    }
    char id[16];
    std::snprintf(id, sizeof id, "post-%02zu", p);
    post.sample.id = id;
    post.sample.text = detail::post_text(p, names[0], names[1]);
    post.sample.image_ref = "img/" + post.sample.id + ".jpg";
    posts.push_back(std::move(post));
  }
  return posts;
}

inline std::vector<GoldSample> corpus(const std::vector<PlannedPost>& posts) {
  std::vector<GoldSample> out;
  for (const auto& p : posts) out.push_back(p.sample);
  return out;
}

// Tag the fixture is designed to produce at N = kDifficulty.
inline TagSet expected_tags(const PlannedEntity& e) {
  return assign_tag({e.text_hits, e.region_hits, kDifficulty});
}

// One text document and one image document per entity, plus distractors that
// share common words but no entity names.
inline std::vector<nlohmann::ordered_json> index_documents(const std::vector<PlannedPost>& posts) {
  std::vector<nlohmann::ordered_json> docs;
  for (const auto& p : posts) {
    for (const auto& e : p.entities) {
      const auto& g = e.gold;
      std::string slug;
      for (char c : g.span) slug += c == ' ' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      nlohmann::ordered_json t;
      t["id"] = "doc/" + slug;
      t["modality"] = "text";
      t["title"] = g.span;
      t["text"] = g.span + " is a " + g.type + " entity that appears in posts such as " + p.sample.id + ".";
      t["url"] = "https://example.org/wiki/" + slug;
      t["keywords"] = nlohmann::ordered_json::array({g.type});
      docs.push_back(std::move(t));
      nlohmann::ordered_json im;
      im["id"] = "img/" + slug;
      im["modality"] = "image";
      im["title"] = g.span + " photo";
      im["text"] = "Reference photo of " + g.span + ".";
      im["url"] = "https://example.org/media/" + slug;
      im["image_ref"] = "ref/" + slug + ".jpg";
      im["keywords"] = nlohmann::ordered_json::array({"photo", g.type});
      docs.push_back(std::move(im));
    }
  }
  for (std::size_t d = 0; d < 6; ++d) {
    nlohmann::ordered_json j;
    j["id"] = "doc/distractor-" + std::to_string(d);
    j["modality"] = d % 2 == 0 ? "text" : "image";
    j["title"] = "Weekend news roundup " + std::to_string(d);
    j["text"] = "A roundup of posts, photos and announcements.";
    j["url"] = "https://example.org/news/" + std::to_string(d);
    if (d % 2 == 1) j["image_ref"] = "ref/news-" + std::to_string(d) + ".jpg";
    docs.push_back(std::move(j));
  }
  return docs;
}

// N answer-only samples per post under "tag/<id>". Sample k gets an entity's
// full triplet right when k < min(text_hits, region_hits), only span+type
// when k < text_hits, only span+region when k < region_hits, and omits it
// otherwise.
inline std::vector<nlohmann::ordered_json> tag_fixture(const std::vector<PlannedPost>& posts) {
  std::vector<nlohmann::ordered_json> lines;
  for (const auto& p : posts) {
    for (std::size_t k = 0; k < kDifficulty; ++k) {
      std::vector<Entity> preds;
      for (const auto& e : p.entities) {
        const auto& g = e.gold;
        const bool text_ok = k < e.text_hits;
        const bool region_ok = k < e.region_hits;
        if (text_ok && region_ok) {
          preds.push_back(detail::as_prediction(g));
        } else if (text_ok) {
          const auto box = detail::first_box(g);
          preds.push_back({g.span, g.type, box ? detail::displaced(*box) : detail::entity_box(0)});
        } else if (region_ok) {
          preds.push_back({g.span, detail::other_type(g.type), detail::first_box(g)});
        }
      }
      lines.push_back(detail::fixture_line("tag/" + p.sample.id, k,
                                           detail::answer_turn("Reading the post and the image.", preds)));
    }
  }
  return lines;
}

// Teacher turns for every post, under "secot/<id>". Searches follow the
// planned tags. Two deliberate faults keep the validator honest: posts with
// p % 7 == 3 answer one entity with the wrong type, posts with p % 9 == 5
// skip their first required search.
inline std::vector<nlohmann::ordered_json> teacher_fixture(const std::vector<PlannedPost>& posts) {
  std::vector<nlohmann::ordered_json> lines;
  for (std::size_t p = 0; p < posts.size(); ++p) {
    const auto& post = posts[p];
    std::vector<std::string> text_spans, image_spans, known;
    for (const auto& e : post.entities) {
      const auto tags = expected_tags(e);
      if (tags.count(SearchTag::TextSearch)) text_spans.push_back(e.gold.span);
      if (tags.count(SearchTag::ImageSearch)) image_spans.push_back(e.gold.span);
      if (tags.count(SearchTag::NoSearch)) known.push_back(e.gold.span);
    }
    const bool skip_search = p % 9 == 5 && !(text_spans.empty() && image_spans.empty());
    if (skip_search) (text_spans.empty() ? image_spans : text_spans).clear();

    const std::string id = "secot/" + post.sample.id;
    std::size_t turn = 0;
    if (!text_spans.empty()) {
      std::string who;
      for (const auto& s : text_spans) who += (who.empty() ? "" : ", ") + s;
      lines.push_back(detail::fixture_line(
          id, turn++,
          detail::search_turn("I am not sure who or what " + who + " is. Searching the web for background.",
                              Modality::Text, text_spans)));
    }
    if (!image_spans.empty()) {
      std::string who;
      for (const auto& s : image_spans) who += (who.empty() ? "" : ", ") + s;
      lines.push_back(detail::fixture_line(
          id, turn++,
          detail::search_turn("I cannot tell where " + who + " is in the image. Looking for reference photos.",
                              Modality::Image, image_spans)));
    }
    std::string reason;
    for (const auto& s : known) reason += "I recognise " + s + ". ";
    reason += "Combining the post, the image and any retrieved evidence.";
    std::vector<Entity> answer;
    for (const auto& g : post.sample.entities) answer.push_back(detail::as_prediction(g));
    if (p % 7 == 3) answer.back().type = detail::other_type(answer.back().type);
    lines.push_back(detail::fixture_line(id, turn, detail::answer_turn(reason, answer)));
  }
  return lines;
}

// RL rollout fixture under "<id>", shared by all group members. Each turn
// position has several alternatives drawn per member seed.
inline std::vector<nlohmann::ordered_json> rollout_fixture(const std::vector<PlannedPost>& posts) {
  std::vector<nlohmann::ordered_json> lines;
  for (const auto& post : posts) {
    const auto& id = post.sample.id;
    std::vector<Entity> correct, partial;
    std::vector<std::string> spans;
    for (const auto& g : post.sample.entities) {
      correct.push_back(detail::as_prediction(g));
      spans.push_back(g.span);
    }
    partial = correct;
    partial.back().type = detail::other_type(partial.back().type);
    const auto answer_ok = detail::answer_turn("I know both entities in this post.", correct);
    const auto answer_partial = detail::answer_turn("I think I know these entities.", partial);
    const auto text = detail::search_turn("Let me check these names first.", Modality::Text, spans);
    const auto image = detail::search_turn("Let me find what they look like.", Modality::Image, spans);
    const std::string invalid = "<answer>{\"entities\": []}</answer>";

    lines.push_back(detail::fixture_line(id, 0, answer_ok));
    lines.push_back(detail::fixture_line(id, 0, answer_partial));
    lines.push_back(detail::fixture_line(id, 0, text));
    lines.push_back(detail::fixture_line(id, 0, image));
    lines.push_back(detail::fixture_line(id, 1, detail::answer_turn("The search confirms my guess.", correct)));
    lines.push_back(detail::fixture_line(id, 1, answer_partial));
    lines.push_back(detail::fixture_line(id, 1, invalid));
    lines.push_back(detail::fixture_line(id, 1, image));
    for (std::size_t t = 2; t < 7; ++t)
      lines.push_back(detail::fixture_line(id, t, detail::answer_turn("Answering now.", correct)));
  }
  return lines;
}

struct Files {
  std::string gold;
  std::string index;
  std::string tag_policy;
  std::string teacher;
  std::string rollout_policy;
};

inline std::string to_jsonl(const std::vector<nlohmann::ordered_json>& lines) {
  std::string out;
  for (const auto& l : lines) out += jsonl::dump_line(l) + "\n";
  return out;
}

inline Files render() {
  const auto posts = plan();
  std::vector<nlohmann::ordered_json> gold;
  for (const auto& p : posts) gold.push_back(to_json(p.sample));
  return {to_jsonl(gold), to_jsonl(index_documents(posts)), to_jsonl(tag_fixture(posts)),
          to_jsonl(teacher_fixture(posts)), to_jsonl(rollout_fixture(posts))};
}

inline void write(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto f = render();
  jsonl::write_file(dir / "gold.jsonl", f.gold);
  jsonl::write_file(dir / "index.jsonl", f.index);
  jsonl::write_file(dir / "tag_policy.jsonl", f.tag_policy);
  jsonl::write_file(dir / "teacher.jsonl", f.teacher);
  jsonl::write_file(dir / "rollout_policy.jsonl", f.rollout_policy);
}

// ---- tabular search policy -------------------------------------------------

// One logit per post: P(search) = sigmoid(theta). Without retrieved evidence
// each entity is answered correctly with its knowledge probability; after a
// text search every entity is answered correctly with at least
// `informed_accuracy`. Wrong answers carry the wrong type.
class TabularSearchPolicy final : public Policy {
 public:
  struct Post {
    GoldSample sample;
    std::vector<double> knowledge;  // per entity
    double theta = 0.0;
  };

  explicit TabularSearchPolicy(std::vector<Post> posts, double informed_accuracy = 0.95)
      : posts_(std::move(posts)), informed_(informed_accuracy) {
    for (std::size_t i = 0; i < posts_.size(); ++i) index_[posts_[i].sample.id] = i;
  }

  static double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

  Generation generate(const GenerateRequest& request) override {
    const auto& post = find(request.trajectory_id);
    std::mt19937_64 rng(request.seed);
    const bool informed = request.history.find(tags::kInformationOpen) != std::string::npos;
    std::string text;
    if (!informed && uniform(rng) < sigmoid(post.theta)) {
      std::vector<std::string> spans;
      for (const auto& g : post.sample.entities) spans.push_back(g.span);
      text = detail::search_turn("Checking the names.", Modality::Text, spans);
    } else {
      std::vector<Entity> answer;
      for (std::size_t i = 0; i < post.sample.entities.size(); ++i) {
        const double p = informed ? std::max(post.knowledge[i], informed_) : post.knowledge[i];
        auto e = detail::as_prediction(post.sample.entities[i]);
        if (uniform(rng) >= p) e.type = detail::other_type(e.type);
        answer.push_back(std::move(e));
      }
      text = detail::answer_turn("Answering.", answer);
    }
    const auto n = word_count(text);
    return {std::move(text), n};
  }

  std::string describe() const override { return "tabular"; }

  std::vector<Post>& posts() noexcept { return posts_; }
  const std::vector<Post>& posts() const noexcept { return posts_; }

  double expected_search_ratio() const {
    double s = 0.0;
    for (const auto& p : posts_) s += sigmoid(p.theta);
    return posts_.empty() ? 0.0 : s / static_cast<double>(posts_.size());
  }

 private:
  static double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

  const Post& find(const std::string& trajectory_id) const {
    const auto base = trajectory_id.substr(0, trajectory_id.find('#'));
    auto it = index_.find(base);
    if (it == index_.end()) throw fixture_exhausted(trajectory_id);
    return posts_[it->second];
  }

  std::vector<Post> posts_;
  double informed_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Knowledge probability per planned entity: the fraction of tag samples that
// got its full triplet right.
inline std::vector<TabularSearchPolicy::Post> tabular_posts(const std::vector<PlannedPost>& posts) {
  std::vector<TabularSearchPolicy::Post> out;
  for (const auto& p : posts) {
    TabularSearchPolicy::Post tp;
    tp.sample = p.sample;
    for (const auto& e : p.entities)
      tp.knowledge.push_back(static_cast<double>(std::min(e.text_hits, e.region_hits)) /
                             static_cast<double>(kDifficulty));
    out.push_back(std::move(tp));
  }
  return out;
}

struct SearchTrainingConfig {
  RewardConfig reward;
  RolloutConfig rollout;
  std::size_t group_size = 8;
  std::size_t epochs = 30;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

struct SearchTrainingResult {
  std::vector<double> sampled_ratio;  // fraction of rollouts that searched, per epoch
  double final_ratio = 0.0;           // mean P(search) after training
};

// On-policy GRPO: one update per group, where the clipped ratio is 1 and the
// gradient of the surrogate reduces to the advantage times the score
// function d log pi(a) / d theta = a - sigmoid(theta).
inline SearchTrainingResult train_search_policy(TabularSearchPolicy& policy, Tools& tools,
                                                const SearchTrainingConfig& cfg) {
  SearchTrainingResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> calls;
    for (std::size_t pi = 0; pi < policy.posts().size(); ++pi) {
      auto& post = policy.posts()[pi];
      const auto seed = mix_seed(cfg.seed, epoch * 1000003ULL + pi);
      const auto group = run_group(post.sample.input(), policy, tools, cfg.rollout, cfg.group_size, seed);
      std::vector<double> rewards;
      for (const auto& t : group) {
        rewards.push_back(compute_reward(t, post.sample.entities, cfg.reward).total);
        calls.push_back(t.n_tool_calls);
      }
      const auto adv = group_advantages(rewards);
      const double p = TabularSearchPolicy::sigmoid(post.theta);
      double grad = 0.0;
      for (std::size_t i = 0; i < group.size(); ++i) {
        const double a = group[i].n_tool_calls > 0 ? 1.0 : 0.0;
        grad += adv.advantages[i] * (a - p);
      }
      post.theta += cfg.learning_rate * grad / static_cast<double>(group.size());
    }
    result.sampled_ratio.push_back(search_ratio(calls));
  }
  result.final_ratio = policy.expected_search_ratio();
  return result;
}

}  // namespace sake::synthetic
