#pragma once

#include <algorithm>
#include <span>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/metrics.hpp"
#include "sake/rollout.hpp"

namespace sake {

struct RewardConfig {
  double lambda_f1 = 0.9;
  double lambda_fmt = 0.1;
  double lambda_search = 0.01;
  double gamma = 0.8;  // 0.8 for coarse-grained labels, 0.6 for fine-grained

  void validate() const {
    if (lambda_f1 < 0 || lambda_fmt < 0 || lambda_search < 0)
      throw config_error("BadConfig", "reward weights must be non-negative");
  }
};

struct RewardBreakdown {
  double r_f1 = 0.0;
  int r_fmt = 0;
  double n_search = 0.0;  // tool calls per gold entity
  bool penalty_active = false;
  double total = 0.0;
};

// total = lambda_f1 * r_f1 + lambda_fmt * r_fmt - lambda_search * [r_f1 >= gamma] * n_search
inline RewardBreakdown combine_reward(double r_f1, int r_fmt, double n_search, const RewardConfig& cfg) {
  RewardBreakdown b;
  b.r_f1 = r_f1;
  b.r_fmt = r_fmt;
  b.n_search = n_search;
  b.penalty_active = r_f1 >= cfg.gamma;
  b.total = cfg.lambda_f1 * r_f1 + cfg.lambda_fmt * static_cast<double>(r_fmt);
  if (b.penalty_active) b.total -= cfg.lambda_search * n_search;
  return b;
}

// GMNER F1 of the final answer. An entity-free post answered with an empty
// entity list counts as a perfect answer.
inline double answer_f1(const Trajectory& traj, std::span<const GoldEntity> gold) {
  if (!traj.final) return 0.0;
  if (gold.empty() && traj.final->entities.empty()) return 1.0;
  return score(traj.final->entities, gold, Task::GMNER).f1;
}

inline RewardBreakdown compute_reward(const Trajectory& traj, std::span<const GoldEntity> gold,
                                      const RewardConfig& cfg) {
  const double r_f1 = answer_f1(traj, gold);
  const int r_fmt = (traj.status == TrajectoryStatus::Answered && traj.all_valid()) ? 1 : 0;
  const double n_search =
      static_cast<double>(traj.n_tool_calls) / static_cast<double>(std::max<std::size_t>(1, gold.size()));
  return combine_reward(r_f1, r_fmt, n_search, cfg);
}

inline nlohmann::ordered_json to_json(const RewardBreakdown& b) {
  nlohmann::ordered_json j;
  j["r_f1"] = b.r_f1;
  j["r_fmt"] = b.r_fmt;
  j["n_search"] = b.n_search;
  j["penalty_active"] = b.penalty_active;
  j["total"] = b.total;
  return j;
}

inline RewardBreakdown reward_from_json(const nlohmann::json& j) {
  RewardBreakdown b;
  b.r_f1 = j.at("r_f1").get<double>();
  b.r_fmt = j.at("r_fmt").get<int>();
  b.n_search = j.at("n_search").get<double>();
  b.penalty_active = j.at("penalty_active").get<bool>();
  b.total = j.at("total").get<double>();
  return b;
}

}  // namespace sake
