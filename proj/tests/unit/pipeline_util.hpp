#pragma once

// Runs the full command-line pipeline over the bundled synthetic corpus.
// Shared by the unit tests and the acceptance suite.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sake/cli.hpp"

namespace sake::testing {

struct PipelineRun {
  int status = 0;
  std::string failed_step;
  std::string log;
  std::map<std::string, std::string> files;  // relative name -> bytes
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::vector<std::pair<std::string, std::vector<std::string>>> pipeline_steps(
    const std::filesystem::path& data, const std::filesystem::path& dir, std::uint64_t seed, std::size_t group = 8) {
  const auto d = [&](const char* name) { return (data / name).string(); };
  const auto o = [&](const char* name) { return (dir / name).string(); };
  const auto s = std::to_string(seed);
  return {
      {"tag-gen",
       {"tag-gen", "--gold", d("gold.jsonl"), "--policy", "scripted:" + d("tag_policy.jsonl"), "--out-dir", dir.string(),
        "--n", "4", "--seed", s}},
      {"secot-build",
       {"secot-build", "--tagged", o("tagged.jsonl"), "--policy", "scripted:" + d("teacher.jsonl"), "--tools",
        "local:" + d("index.jsonl"), "--out", o("secot.jsonl"), "--accepted", o("secot_accepted.jsonl"), "--seed", s}},
      {"rollout",
       {"rollout", "--input", o("rl_pool.jsonl"), "--policy", "scripted:" + d("rollout_policy.jsonl"), "--tools",
        "local:" + d("index.jsonl"), "--out", o("rollouts.jsonl"), "--group", std::to_string(group), "--seed", s}},
      {"reward",
       {"reward", "--trajectories", o("rollouts.jsonl"), "--gold", d("gold.jsonl"), "--out", o("rewarded.jsonl")}},
      {"grpo-batch", {"grpo-batch", "--trajectories", o("rewarded.jsonl"), "--out", o("batch.jsonl")}},
      {"eval", {"eval", "--pred", o("rollouts.jsonl"), "--gold", d("gold.jsonl"), "--out", o("eval.json")}},
  };
}

inline PipelineRun run_pipeline(const std::filesystem::path& data, const std::filesystem::path& dir,
                                std::uint64_t seed) {
  PipelineRun run;
  std::filesystem::create_directories(dir);
  std::ostringstream log;
  for (const auto& [name, args] : pipeline_steps(data, dir, seed)) {
    run.status = cli::run(args, log, log);
    if (run.status != 0) {
      run.failed_step = name;
      break;
    }
  }
  run.log = log.str();
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file()) run.files[entry.path().filename().string()] = read_bytes(entry.path());
  return run;
}

}  // namespace sake::testing
