#pragma once

// Command-line frontend. Kept in a header so tests can drive the same code
// path in-process; tools/sake.cpp is a two-line main.
//
// Exit codes: 0 success, 2 config error, 3 upstream service error,
// 4 validation failure, 1 anything else.

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sake/config.hpp"
#include "sake/grpo.hpp"
#include "sake/jsonl.hpp"
#include "sake/metrics.hpp"
#include "sake/policy.hpp"
#include "sake/policy_remote.hpp"
#include "sake/reward.hpp"
#include "sake/rollout.hpp"
#include "sake/secot.hpp"
#include "sake/tagger.hpp"
#include "sake/toolgw.hpp"
#include "sake/toolgw_http.hpp"

namespace sake::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfigError = 2, kUpstreamError = 3, kValidationError = 4 };

inline int exit_code(const Error& e) noexcept {
  switch (e.kind()) {
    case ErrorKind::Config: return kConfigError;
    case ErrorKind::Upstream: return kUpstreamError;
    case ErrorKind::Validation: return kValidationError;
    case ErrorKind::Internal: return kInternal;
  }
  return kInternal;
}

// "scripted:PATH", "replay:PATH", "remote" (SAKE_POLICY_URL) or "remote:URL".
inline std::shared_ptr<Policy> make_policy(const std::string& spec, const RunConfig& cfg) {
  const auto colon = spec.find(':');
  const auto kind = spec.substr(0, colon);
  const auto arg = colon == std::string::npos ? std::string{} : spec.substr(colon + 1);
  if (kind == "scripted" && !arg.empty()) return ScriptedPolicy::from_file(arg);
  if (kind == "replay" && !arg.empty()) return ReplayPolicy::from_file(arg);
  if (kind == "remote") {
    auto rc = RemotePolicyConfig::from_env();
    if (!arg.empty()) rc.url = arg;
    if (!cfg.policy_model.empty()) rc.model = cfg.policy_model;
    rc.temperature = cfg.temperature;
    if (rc.url.empty()) throw config_error("MissingPolicyUrl", "remote policy needs a URL or SAKE_POLICY_URL");
    return std::make_shared<RemotePolicy>(std::move(rc));
  }
  throw config_error("BadPolicySpec", "unknown policy spec '" + spec + "' (scripted:|replay:|remote[:url])");
}

inline std::shared_ptr<Summarizer> make_summarizer(const RunConfig& cfg) {
  if (cfg.summarizer_url.empty()) return std::make_shared<IdentitySummarizer>();
  return std::make_shared<RemoteSummarizer>(cfg.summarizer_url);
}

// Search backend behind a local gateway: "local:PATH" or "engine:URL".
inline std::shared_ptr<SearchBackend> make_backend(const std::string& spec, const RunConfig& cfg) {
  if (spec.rfind("local:", 0) == 0) return LocalIndex::from_path(spec.substr(6));
  if (spec.rfind("engine:", 0) == 0) return std::make_shared<HttpSearchBackend>(spec.substr(7), cfg.k_results);
  throw config_error("BadToolsSpec", "unknown backend spec '" + spec + "' (local:PATH|engine:URL)");
}

// "local:PATH" / "engine:URL" run an in-process gateway; "http://host:port"
// talks to a running serve-tools.
inline std::shared_ptr<Tools> make_tools(const std::string& spec, const RunConfig& cfg) {
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) return std::make_shared<HttpTools>(spec);
  auto gateway = std::make_shared<SearchGateway>(make_backend(spec, cfg), cfg.gateway(), make_summarizer(cfg));
  return std::make_shared<GatewayTools>(std::move(gateway));
}

namespace detail {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--set", c.overrides, "config override key=value (repeatable)");
  sub->add_option("--seed", c.seed, "random seed");
}

inline RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

inline std::filesystem::path echo_path_for_file(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".config.json");
}

// Rollout inputs: gold records, tagged records, or bare {id, text, image_ref}.
inline std::vector<RolloutInput> read_inputs(const std::filesystem::path& path) {
  std::vector<RolloutInput> out;
  const auto rows = jsonl::read(path);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.push_back(rollout_input_from_json(rows[i], "post-" + std::to_string(i)));
  return out;
}

inline std::map<std::string, GoldSample> gold_by_id(const std::filesystem::path& path) {
  std::map<std::string, GoldSample> out;
  for (auto& s : read_gold(path)) {
    const auto id = s.id;
    if (!out.emplace(id, std::move(s)).second) throw validation_error("DuplicateId", "duplicate gold id " + id);
  }
  return out;
}

inline const GoldSample& lookup_gold(const std::map<std::string, GoldSample>& gold, const std::string& id) {
  auto it = gold.find(id);
  if (it == gold.end()) throw validation_error("UnknownSample", "no gold record for '" + id + "'");
  return it->second;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline nlohmann::ordered_json to_json(const ScoreReport& r) {
  nlohmann::ordered_json j;
  j["task"] = std::string(sake::to_string(r.task));
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["correct"] = r.n_correct;
  j["predicted"] = r.n_predict;
  j["gold"] = r.n_gold;
  return j;
}

inline void print_table(std::ostream& os, const std::string& label, const std::vector<ScoreReport>& reports,
                        std::optional<double> sr) {
  os << std::left << std::setw(10) << "split" << std::setw(8) << "task" << std::setw(9) << "P" << std::setw(9)
     << "R" << std::setw(9) << "F1" << std::setw(9) << "correct" << std::setw(9) << "pred" << "gold\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(10) << label << std::setw(8) << sake::to_string(r.task) << std::setw(9)
       << fmt(r.precision) << std::setw(9) << fmt(r.recall) << std::setw(9) << fmt(r.f1) << std::setw(9)
       << r.n_correct << std::setw(9) << r.n_predict << r.n_gold << '\n';
  }
  if (sr) os << "search_ratio " << fmt(*sr) << '\n';
}

// ---- subcommands -------------------------------------------------------------

struct ServeOpts {
  Common common;
  std::string index;
  std::string engine;
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline int serve_tools(const ServeOpts& o, std::ostream& err) {
  auto cfg = resolve(o.common);
  cfg.validate();
  if (o.index.empty() == o.engine.empty()) throw config_error("BadToolsSpec", "give exactly one of --index/--engine");
  auto backend = make_backend(o.index.empty() ? "engine:" + o.engine : "local:" + o.index, cfg);
  auto gateway = std::make_shared<SearchGateway>(backend, cfg.gateway(), make_summarizer(cfg));
  ToolServer server(gateway, [&err](const std::string& line) { err << line << '\n' << std::flush; });

  // Signals are taken synchronously by a watcher thread so stop() runs
  // outside a signal handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  const int port = server.bind(o.host, o.port);
  err << nlohmann::json{{"event", "listening"}, {"host", o.host}, {"port", port}, {"backend", backend->id()},
                        {"config", sake::to_json(cfg)}}
             .dump()
      << '\n'
      << std::flush;
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.serve_forever();
  if (watcher.joinable()) {
    pthread_kill(watcher.native_handle(), SIGTERM);
    watcher.join();
  }
  err << nlohmann::json{{"event", "stopped"}}.dump() << '\n';
  return kOk;
}

struct RolloutOpts {
  Common common;
  std::string input, policy, tools, out;
  std::optional<std::size_t> m, group;
  bool single = false;
};

inline int rollout(const RolloutOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  if (o.m) cfg.max_actions = *o.m;
  if (o.group) cfg.group_size = *o.group;
  cfg.validate();
  auto policy = make_policy(o.policy, cfg);
  auto tools = make_tools(o.tools, cfg);
  const auto inputs = read_inputs(o.input);
  const bool parallel = o.policy.rfind("remote", 0) == 0;
  jsonl::Writer w(o.out);
  std::size_t n = 0;
  for (const auto& in : inputs) {
    const auto seed = mix_seed(cfg.seed, hash_string(in.id));
    if (o.single) {
      w.write(to_json(run_rollout(in, *policy, *tools, cfg.rollout(), in.id, seed)));
      ++n;
      continue;
    }
    for (const auto& t : run_group(in, *policy, *tools, cfg.rollout(), cfg.group_size, seed, parallel)) {
      w.write(to_json(t));
      ++n;
    }
  }
  w.flush();
  write_config_echo(cfg, echo_path_for_file(o.out));
  out << "wrote " << n << " trajectories to " << o.out << '\n';
  return kOk;
}

struct TagOpts {
  Common common;
  std::string gold, policy, out_dir;
  std::optional<std::size_t> n;
};

inline int tag_gen(const TagOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  if (o.n) cfg.difficulty_n = *o.n;
  cfg.validate();
  auto policy = make_policy(o.policy, cfg);
  const auto corpus = read_gold(o.gold);
  const auto result = tag_dataset(corpus, *policy, cfg.tagger());
  const std::filesystem::path dir(o.out_dir);
  {
    jsonl::Writer w(dir / "tags.jsonl");
    for (const auto& r : result.reports) w.write(sake::to_json(r));
  }
  {
    // Full manifest: every sample with its per-entity tags.
    jsonl::Writer w(dir / "tagged.jsonl");
    std::size_t ri = 0;
    for (const auto& s : corpus) {
      TaggedSample t{s, {}};
      for (std::size_t i = 0; i < s.entities.size(); ++i) t.entity_tags.push_back(result.reports[ri++].tags);
      w.write(sake::to_json(t));
    }
  }
  {
    jsonl::Writer w(dir / "cold_start.jsonl");
    for (const auto& t : result.cold_start_pool) w.write(sake::to_json(t));
  }
  {
    jsonl::Writer w(dir / "rl_pool.jsonl");
    for (const auto& t : result.rl_pool) w.write(sake::to_json(t));
  }
  write_config_echo(cfg, dir / "config.json");
  out << "tagged " << corpus.size() << " samples: cold_start=" << result.cold_start_pool.size()
      << " rl=" << result.rl_pool.size() << '\n';
  return kOk;
}

struct SecotOpts {
  Common common;
  std::string tagged, policy, tools, judge, out, accepted;
};

inline int secot_build(const SecotOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  cfg.validate();
  auto teacher = make_policy(o.policy, cfg);
  auto tools = make_tools(o.tools, cfg);
  std::unique_ptr<PolicyJudge> judge;
  if (!o.judge.empty()) judge = std::make_unique<PolicyJudge>(make_policy(o.judge, cfg));
  const auto pool = filter_pool(read_tagged(o.tagged));
  const auto records = build_secot(pool, *teacher, *tools, cfg.secot(), judge.get());
  {
    jsonl::Writer w(o.out);
    for (const auto& r : records) w.write(sake::to_json(r));
  }
  if (!o.accepted.empty()) {
    jsonl::Writer w(o.accepted);
    for (const auto& r : records)
      if (r.verdict && r.verdict->accepted) w.write(sake::to_json(r));
  }
  write_config_echo(cfg, echo_path_for_file(o.out));
  const auto stats = secot_stats(records);
  out << "secot: " << stats.accepted << "/" << stats.total << " accepted\n";
  return kOk;
}

struct RewardOpts {
  Common common;
  std::string trajectories, gold, out;
};

// Copies each trajectory record and appends its breakdown under "reward".
inline int reward(const RewardOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  cfg.validate();
  const auto gold = gold_by_id(o.gold);
  jsonl::Writer w(o.out);
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& j : jsonl::read(o.trajectories)) {
    const auto t = trajectory_from_json(j);
    const auto& g = lookup_gold(gold, t.input.id);
    const auto b = compute_reward(t, g.entities, cfg.reward());
    auto line = sake::to_json(t);
    line["reward"] = sake::to_json(b);
    w.write(line);
    sum += b.total;
    ++n;
  }
  w.flush();
  write_config_echo(cfg, echo_path_for_file(o.out));
  out << "rewarded " << n << " trajectories, mean total " << fmt(n ? sum / static_cast<double>(n) : 0.0) << '\n';
  return kOk;
}

struct GrpoOpts {
  Common common;
  std::string trajectories, out;
};

// Input is the output of `reward`. Groups are runs of consecutive
// trajectories that share an input id.
inline int grpo_batch(const GrpoOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  cfg.validate();
  struct Group {
    std::vector<Trajectory> members;
    std::vector<RewardBreakdown> rewards;
  };
  std::vector<Group> groups;
  for (const auto& j : jsonl::read(o.trajectories)) {
    auto t = trajectory_from_json(j);
    if (!j.contains("reward"))
      throw validation_error("MissingReward", "trajectory '" + t.id + "' has no reward; run `sake reward` first");
    if (groups.empty() || groups.back().members.front().input.id != t.input.id) groups.emplace_back();
    groups.back().rewards.push_back(reward_from_json(j["reward"]));
    groups.back().members.push_back(std::move(t));
  }
  std::vector<TrainingRecord> batch;
  for (const auto& g : groups) {
    std::vector<SpanMap> spans;
    for (const auto& t : g.members) spans.push_back(word_span_map(t));
    for (auto& r : emit_training_batch(g.members.front().input.id, g.members, g.rewards, spans))
      batch.push_back(std::move(r));
  }
  write_batch(o.out, batch);
  write_config_echo(cfg, echo_path_for_file(o.out));
  out << "wrote " << batch.size() << " training records in " << groups.size() << " groups\n";
  return kOk;
}

struct EvalOpts {
  Common common;
  std::string pred, gold, train, task = "all", unseen_rule = "mention", out;
};

inline UnseenRule unseen_rule_from_string(const std::string& s) {
  if (s == "mention") return UnseenRule::Mention;
  if (s == "mention_type") return UnseenRule::MentionType;
  if (s == "mention_type_grounding") return UnseenRule::MentionTypeGrounding;
  throw config_error("BadUnseenRule", "unknown unseen rule '" + s + "'");
}

// Prediction records are either trajectories (scored on their final answer)
// or {"id", "entities": [...]}.
inline std::vector<SampleResult> read_predictions(const std::filesystem::path& path,
                                                  const std::map<std::string, GoldSample>& gold) {
  std::vector<SampleResult> out;
  for (const auto& j : jsonl::read(path)) {
    SampleResult s;
    if (j.contains("turns")) {
      const auto t = trajectory_from_json(j);
      s.id = t.input.id;
      if (t.final) s.predicted = t.final->entities;
      s.n_tool_calls = t.n_tool_calls;
    } else {
      if (!j.contains("id") || !j.contains("entities"))
        throw validation_error("BadPrediction", "prediction needs id and entities");
      s.id = j["id"].get<std::string>();
      s.predicted = answer_from_json(nlohmann::json{{"entities", j["entities"]}}).entities;
      s.n_tool_calls = j.value("n_tool_calls", std::size_t{0});
    }
    s.gold = lookup_gold(gold, s.id).entities;
    out.push_back(std::move(s));
  }
  return out;
}

inline int eval(const EvalOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  cfg.validate();
  std::vector<Task> tasks;
  if (o.task == "all") tasks = {Task::GMNER, Task::MNER, Task::EEG};
  else tasks = {task_from_string(o.task)};
  const auto gold = gold_by_id(o.gold);
  const auto samples = read_predictions(o.pred, gold);
  const bool has_tools = std::any_of(samples.begin(), samples.end(), [](const auto& s) { return s.n_tool_calls; });

  auto reports_for = [&](std::span<const SampleResult> part) {
    std::vector<ScoreReport> rs;
    for (auto t : tasks) rs.push_back(score_corpus(part, t, cfg.iou_threshold));
    return rs;
  };
  auto ratio_for = [&](std::span<const SampleResult> part) {
    std::vector<std::size_t> calls;
    for (const auto& s : part) calls.push_back(s.n_tool_calls);
    return search_ratio(calls);
  };

  nlohmann::ordered_json report;
  report["n_samples"] = samples.size();
  const auto all = reports_for(samples);
  print_table(out, "all", all, ratio_for(samples));
  for (const auto& r : all) report["all"].push_back(to_json(r));
  report["search_ratio"] = ratio_for(samples);
  report["has_tool_calls"] = has_tools;

  if (!o.train.empty()) {
    TrainIndex train;
    for (const auto& s : read_gold(o.train))
      for (const auto& e : s.entities) train.add(e);
    const auto rule = unseen_rule_from_string(o.unseen_rule);
    std::vector<SampleResult> seen, unseen;
    for (const auto& s : samples) (is_unseen(s, train, rule) ? unseen : seen).push_back(s);
    for (const auto& [label, part] : {std::pair{"seen", &seen}, std::pair{"unseen", &unseen}}) {
      const auto rs = reports_for(*part);
      print_table(out, label, rs, ratio_for(*part));
      auto& node = report[label];
      node["n_samples"] = part->size();
      node["search_ratio"] = ratio_for(*part);
      for (const auto& r : rs) node["scores"].push_back(to_json(r));
    }
    report["unseen_rule"] = o.unseen_rule;
  }
  if (!o.out.empty()) {
    jsonl::write_file(o.out, report.dump(2) + "\n");
    write_config_echo(cfg, echo_path_for_file(o.out));
  }
  return kOk;
}

struct ReportOpts {
  Common common;
  std::string secot, tags, out;
};

inline int report(const ReportOpts& o, std::ostream& out) {
  auto cfg = resolve(o.common);
  cfg.validate();
  if (o.secot.empty() && o.tags.empty()) throw config_error("NothingToReport", "give --secot and/or --tags");
  std::ostringstream md;
  if (!o.secot.empty()) {
    std::vector<SeCoTRecord> records;
    for (const auto& j : jsonl::read(o.secot)) records.push_back(secot_record_from_json(j));
    md << render_stats_markdown(secot_stats(records));
  }
  if (!o.tags.empty()) {
    std::map<std::string, std::size_t> dist;
    std::size_t entities = 0;
    for (const auto& j : jsonl::read(o.tags)) {
      ++entities;
      std::string key;
      for (const auto& t : j.at("tags")) key += (key.empty() ? "" : "+") + t.get<std::string>();
      ++dist[key];
    }
    if (!o.secot.empty()) md << '\n';
    md << "# Search tags\n\n| tags | entities |\n|---|---|\n";
    for (const auto& [k, v] : dist) md << "| " << k << " | " << v << " |\n";
    md << "| total | " << entities << " |\n";
  }
  if (o.out.empty()) {
    out << md.str();
  } else {
    jsonl::write_file(o.out, md.str());
    write_config_echo(cfg, echo_path_for_file(o.out));
  }
  return kOk;
}

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"sake: search-augmented entity extraction toolkit"};
  app.require_subcommand(1);

  ServeOpts serve;
  auto* s = app.add_subcommand("serve-tools", "run the search gateway as an HTTP service");
  add_common(s, serve.common);
  s->add_option("--index", serve.index, "local index (JSONL file or directory)");
  s->add_option("--engine", serve.engine, "external search engine URL");
  s->add_option("--host", serve.host, "bind address");
  s->add_option("--port", serve.port, "port (0 = ephemeral)");

  RolloutOpts ro;
  auto* r = app.add_subcommand("rollout", "run rollout groups over an input set");
  add_common(r, ro.common);
  r->add_option("--input", ro.input, "input JSONL")->required();
  r->add_option("--policy", ro.policy, "policy spec")->required();
  r->add_option("--tools", ro.tools, "tools spec")->required();
  r->add_option("--out", ro.out, "trajectory JSONL")->required();
  r->add_option("--m", ro.m, "action budget");
  r->add_option("--group", ro.group, "group size");
  r->add_flag("--single", ro.single, "one trajectory per input instead of a group");

  TagOpts tg;
  auto* t = app.add_subcommand("tag-gen", "assign search tags by repeated sampling");
  add_common(t, tg.common);
  t->add_option("--gold", tg.gold, "gold JSONL")->required();
  t->add_option("--policy", tg.policy, "policy spec")->required();
  t->add_option("--out-dir", tg.out_dir, "output directory")->required();
  t->add_option("--n", tg.n, "difficulty level (samples per post)");

  SecotOpts so;
  auto* c = app.add_subcommand("secot-build", "synthesize and validate cold-start trajectories");
  add_common(c, so.common);
  c->add_option("--tagged", so.tagged, "tagged manifest JSONL")->required();
  c->add_option("--policy", so.policy, "teacher policy spec")->required();
  c->add_option("--tools", so.tools, "tools spec")->required();
  c->add_option("--judge", so.judge, "judge policy spec");
  c->add_option("--out", so.out, "all records JSONL")->required();
  c->add_option("--accepted", so.accepted, "accepted records JSONL");

  RewardOpts rw;
  auto* w = app.add_subcommand("reward", "score trajectories with the composite reward");
  add_common(w, rw.common);
  w->add_option("--trajectories", rw.trajectories, "trajectory JSONL")->required();
  w->add_option("--gold", rw.gold, "gold JSONL")->required();
  w->add_option("--out", rw.out, "trajectory JSONL with rewards")->required();

  GrpoOpts gb;
  auto* g = app.add_subcommand("grpo-batch", "emit advantage-weighted, masked training records");
  add_common(g, gb.common);
  g->add_option("--trajectories", gb.trajectories, "rewarded trajectory JSONL (groups contiguous)")->required();
  g->add_option("--out", gb.out, "training batch JSONL")->required();

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "strict P/R/F1 evaluation");
  add_common(e, ev.common);
  e->add_option("--pred", ev.pred, "predictions or trajectories JSONL")->required();
  e->add_option("--gold", ev.gold, "gold JSONL")->required();
  e->add_option("--task", ev.task, "gmner|mner|eeg|all");
  e->add_option("--train", ev.train, "training gold JSONL for the seen/unseen split");
  e->add_option("--unseen-rule", ev.unseen_rule, "mention|mention_type|mention_type_grounding");
  e->add_option("--out", ev.out, "JSON report");

  ReportOpts rp;
  auto* p = app.add_subcommand("report", "markdown statistics for SeCoT records and tags");
  add_common(p, rp.common);
  p->add_option("--secot", rp.secot, "SeCoT records JSONL");
  p->add_option("--tags", rp.tags, "tags.jsonl from tag-gen");
  p->add_option("--out", rp.out, "markdown file (default stdout)");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("sake");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kConfigError;
  }

  try {
    if (s->parsed()) return serve_tools(serve, err);
    if (r->parsed()) return rollout(ro, out);
    if (t->parsed()) return tag_gen(tg, out);
    if (c->parsed()) return secot_build(so, out);
    if (w->parsed()) return reward(rw, out);
    if (g->parsed()) return grpo_batch(gb, out);
    if (e->parsed()) return eval(ev, out);
    if (p->parsed()) return report(rp, out);
  } catch (const RolloutAborted& ex) {
    err << "error: rollout '" << ex.partial().id << "' aborted: " << ex.what() << '\n';
    return exit_code(ex);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_code(ex);
  } catch (const nlohmann::json::exception& ex) {
    err << "error: malformed record: " << ex.what() << '\n';
    return kValidationError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kInternal;
  }
  return kInternal;
}

}  // namespace sake::cli
