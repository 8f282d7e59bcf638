#pragma once

// Strict GMNER / MNER / EEG scoring.
//
// A predicted triplet is correct for a task when the relevant indicators hold:
//   span   C_e: exact string match after trimming outer whitespace
//   type   C_t: exact string match
//   region C_r: both sides ungrounded, or the predicted box has IoU > 0.5
//               with at least one gold box
// GMNER = C_e & C_t & C_r, MNER = C_e & C_t, EEG = C_e & C_r.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sake/common.hpp"
#include "sake/entity.hpp"

namespace sake {

enum class Task { GMNER, MNER, EEG };

inline std::string_view to_string(Task t) noexcept {
  switch (t) {
    case Task::GMNER: return "GMNER";
    case Task::MNER: return "MNER";
    case Task::EEG: return "EEG";
  }
  return "?";
}

inline Task task_from_string(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "gmner") return Task::GMNER;
  if (l == "mner") return Task::MNER;
  if (l == "eeg") return Task::EEG;
  throw config_error("BadTask", "unknown task '" + std::string(s) + "' (gmner|mner|eeg)");
}

inline constexpr double kDefaultIouThreshold = 0.5;

inline double iou(const BBox& a, const BBox& b) noexcept {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline bool span_match(std::string_view pred, std::string_view gold) noexcept {
  return trim(pred) == trim(gold);
}

// C_r. `threshold` is a strict lower bound.
inline bool region_match(const std::optional<BBox>& pred, std::span<const BBox> gold_boxes,
                         double threshold = kDefaultIouThreshold) noexcept {
  if (gold_boxes.empty()) return !pred.has_value();
  if (!pred) return false;
  double best = 0.0;
  for (const auto& g : gold_boxes) best = std::max(best, iou(*pred, g));
  return best > threshold;
}

inline bool triplet_correct(const Entity& pred, const GoldEntity& gold, Task task,
                            double threshold = kDefaultIouThreshold) noexcept {
  if (!span_match(pred.span, gold.span)) return false;
  switch (task) {
    case Task::GMNER:
      return pred.type == gold.type && region_match(pred.region, gold.boxes, threshold);
    case Task::MNER:
      return pred.type == gold.type;
    case Task::EEG:
      return region_match(pred.region, gold.boxes, threshold);
  }
  return false;
}

struct ScoreReport {
  Task task = Task::GMNER;
  std::size_t n_correct = 0;
  std::size_t n_predict = 0;
  std::size_t n_gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // Micro-averaged merge of two disjoint shards.
  ScoreReport& operator+=(const ScoreReport& other) {
    n_correct += other.n_correct;
    n_predict += other.n_predict;
    n_gold += other.n_gold;
    finalize();
    return *this;
  }

  void finalize() noexcept {
    precision = n_predict == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_predict);
    recall = n_gold == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_gold);
    f1 = (precision + recall) == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  }
};

inline ScoreReport make_report(Task task, std::size_t correct, std::size_t predict, std::size_t gold) {
  ScoreReport r;
  r.task = task;
  r.n_correct = correct;
  r.n_predict = predict;
  r.n_gold = gold;
  r.finalize();
  return r;
}

// One-to-one matching of predictions to golds. Predictions are visited in
// order and each takes the first free compatible gold; when every compatible
// gold is already taken, an augmenting path may reassign earlier predictions.
// With no contention this is plain greedy matching in prediction order; with
// contention it still yields a maximum matching. Returns gold index per
// prediction (or npos).
inline std::vector<std::size_t> match_predictions(std::span<const Entity> preds, std::span<const GoldEntity> golds,
                                                  Task task, double threshold = kDefaultIouThreshold) {
  constexpr auto npos = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> adj(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < golds.size(); ++g)
      if (triplet_correct(preds[p], golds[g], task, threshold)) adj[p].push_back(g);

  std::vector<std::size_t> gold_owner(golds.size(), npos);
  std::vector<std::size_t> pred_match(preds.size(), npos);
  std::vector<char> visited;

  std::function<bool(std::size_t)> augment = [&](std::size_t p) -> bool {
    for (auto g : adj[p]) {
      if (visited[g]) continue;
      visited[g] = 1;
      if (gold_owner[g] == npos || augment(gold_owner[g])) {
        gold_owner[g] = p;
        pred_match[p] = g;
        return true;
      }
    }
    return false;
  };

  for (std::size_t p = 0; p < preds.size(); ++p) {
    // Fast path: a free compatible gold, taken in gold order.
    bool done = false;
    for (auto g : adj[p]) {
      if (gold_owner[g] == npos) {
        gold_owner[g] = p;
        pred_match[p] = g;
        done = true;
        break;
      }
    }
    if (done) continue;
    visited.assign(golds.size(), 0);
    augment(p);
  }
  return pred_match;
}

inline ScoreReport score(std::span<const Entity> preds, std::span<const GoldEntity> golds, Task task,
                         double threshold = kDefaultIouThreshold) {
  const auto m = match_predictions(preds, golds, task, threshold);
  const auto correct = static_cast<std::size_t>(
      std::count_if(m.begin(), m.end(), [](std::size_t g) { return g != static_cast<std::size_t>(-1); }));
  return make_report(task, correct, preds.size(), golds.size());
}

// Per-sample evaluation unit used by corpus-level reports.
struct SampleResult {
  std::string id;
  std::vector<Entity> predicted;
  std::vector<GoldEntity> gold;
  std::size_t n_tool_calls = 0;
};

inline ScoreReport score_corpus(std::span<const SampleResult> samples, Task task,
                                double threshold = kDefaultIouThreshold) {
  ScoreReport total = make_report(task, 0, 0, 0);
  for (const auto& s : samples) total += score(s.predicted, s.gold, task, threshold);
  return total;
}

// Fraction of trajectories that invoked at least one search tool.
inline double search_ratio(std::span<const std::size_t> tool_calls_per_trajectory) noexcept {
  if (tool_calls_per_trajectory.empty()) return 0.0;
  std::size_t searched = 0;
  for (auto n : tool_calls_per_trajectory) searched += n > 0 ? 1 : 0;
  return static_cast<double>(searched) / static_cast<double>(tool_calls_per_trajectory.size());
}

// What makes a test sample "unseen". Mention is the default; the stricter
// variants additionally treat a known mention with a new type (or a new
// type/groundability combination) as unseen.
enum class UnseenRule { Mention, MentionType, MentionTypeGrounding };

struct TrainIndex {
  std::set<std::string> mentions;
  std::set<std::pair<std::string, std::string>> mention_types;
  std::set<std::tuple<std::string, std::string, bool>> mention_type_grounding;

  void add(const GoldEntity& g) {
    const std::string m(trim(g.span));
    mentions.insert(m);
    mention_types.emplace(m, g.type);
    mention_type_grounding.emplace(m, g.type, g.groundable());
  }

  bool seen(const GoldEntity& g, UnseenRule rule) const {
    const std::string m(trim(g.span));
    switch (rule) {
      case UnseenRule::Mention: return mentions.count(m) > 0;
      case UnseenRule::MentionType: return mention_types.count({m, g.type}) > 0;
      case UnseenRule::MentionTypeGrounding:
        return mention_type_grounding.count({m, g.type, g.groundable()}) > 0;
    }
    return false;
  }
};

struct SplitScores {
  ScoreReport gmner, mner, eeg;
  double search_ratio = 0.0;
  std::size_t n_samples = 0;
};

struct SeenUnseenReport {
  SplitScores seen, unseen, all;
};

inline SplitScores score_split(std::span<const SampleResult> samples, double threshold = kDefaultIouThreshold) {
  SplitScores s;
  s.gmner = score_corpus(samples, Task::GMNER, threshold);
  s.mner = score_corpus(samples, Task::MNER, threshold);
  s.eeg = score_corpus(samples, Task::EEG, threshold);
  std::vector<std::size_t> calls;
  calls.reserve(samples.size());
  for (const auto& x : samples) calls.push_back(x.n_tool_calls);
  s.search_ratio = search_ratio(calls);
  s.n_samples = samples.size();
  return s;
}

inline bool is_unseen(const SampleResult& s, const TrainIndex& train, UnseenRule rule) {
  return std::any_of(s.gold.begin(), s.gold.end(), [&](const GoldEntity& g) { return !train.seen(g, rule); });
}

inline SeenUnseenReport seen_unseen_split(std::span<const SampleResult> samples, const TrainIndex* train,
                                          UnseenRule rule = UnseenRule::Mention,
                                          double threshold = kDefaultIouThreshold) {
  if (train == nullptr) throw config_error("MissingTrainCorpus", "seen/unseen split needs the training corpus");
  std::vector<SampleResult> seen, unseen;
  for (const auto& s : samples) (is_unseen(s, *train, rule) ? unseen : seen).push_back(s);
  return {score_split(seen, threshold), score_split(unseen, threshold), score_split(samples, threshold)};
}

}  // namespace sake
