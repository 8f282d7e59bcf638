#include <gtest/gtest.h>

#include <future>
#include <random>

#include "sake/policy.hpp"
#include "sake/policy_remote.hpp"
#include "sake/protocol.hpp"
#include "sake/rollout.hpp"
#include "test_util.hpp"

namespace sake {
namespace {

using testing::answer_text;
using testing::CannedTools;
using testing::FunctionPolicy;
using testing::gen;
using testing::search_text;

ProtocolErrc error_of(std::string_view raw) {
  auto r = parse_segment(raw);
  EXPECT_FALSE(r.has_value()) << raw;
  return r ? ProtocolErrc::StrayText : r.error().code;
}

// ---- protocol ---------------------------------------------------------------

TEST(Protocol, MinimalAnswer) {
  auto r = parse_segment(R"(<reason>R</reason><answer>{"entities":[]}</answer>)");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->reason, "R");
  EXPECT_EQ(r->action, ActionKind::Answer);
  EXPECT_TRUE(r->answer().entities.empty());
}

TEST(Protocol, ImageSearchWithOneQuery) {
  auto r = parse_segment(
      R"(<reason>unsure about Bayern</reason><image_search>{"queries":[{"entity":"Bayern","q":"FC Bayern Munich logo"}]}</image_search>)");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->action, ActionKind::ImageSearch);
  ASSERT_EQ(r->queries().entries.size(), 1u);
  EXPECT_EQ(r->queries().entries[0].entity, "Bayern");
  EXPECT_EQ(r->queries().entries[0].q, "FC Bayern Munich logo");
  EXPECT_EQ(r->queries().modality, Modality::Image);
}

TEST(Protocol, AnswerWithBoxAndNull) {
  auto r = parse_segment(
      R"(<reason>x</reason><answer>{"entities":[{"span":"A","type":"PER","box":[1,2,3,4]},{"span":"B","type":"LOC","box":null}]}</answer>)");
  ASSERT_TRUE(r);
  const auto& e = r->answer().entities;
  ASSERT_EQ(e.size(), 2u);
  ASSERT_TRUE(e[0].region);
  EXPECT_EQ(e[0].region->x2, 3.0);
  EXPECT_FALSE(e[1].region);
}

TEST(Protocol, TwoActionBlocksAreMultipleActions) {
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[]}</answer><text_search>{"queries":[]}</text_search>)"),
            ProtocolErrc::MultipleActions);
  // Reported as MultipleActions even when the first payload is also broken.
  EXPECT_EQ(error_of("<reason>a</reason><answer>…</answer><text_search>…</text_search>"),
            ProtocolErrc::MultipleActions);
}

TEST(Protocol, SpecificErrorCodes) {
  EXPECT_EQ(error_of(""), ProtocolErrc::MissingReason);
  EXPECT_EQ(error_of("just text"), ProtocolErrc::MissingReason);
  EXPECT_EQ(error_of(R"(<answer>{"entities":[]}</answer>)"), ProtocolErrc::MissingReason);
  EXPECT_EQ(error_of(R"(<reason>a</reason><reason>b</reason><answer>{"entities":[]}</answer>)"),
            ProtocolErrc::MultipleReasons);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[]}</answer><reason>b</reason>)"),
            ProtocolErrc::MultipleReasons);
  EXPECT_EQ(error_of("<reason>a</reason>"), ProtocolErrc::NoAction);
  EXPECT_EQ(error_of("<reason>a</reason><information>x</information>"), ProtocolErrc::NoAction);
  EXPECT_EQ(error_of("<reason>a</reason><answer>not json</answer>"), ProtocolErrc::MalformedPayload);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[],"extra":1}</answer>)"),
            ProtocolErrc::MalformedPayload);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[{"span":"A","type":"PER","box":[1,2,3]}]}</answer>)"),
            ProtocolErrc::MalformedPayload);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[{"span":"A","type":"PER"}]}</answer>)"),
            ProtocolErrc::MalformedPayload);
  EXPECT_EQ(error_of(R"(<reason>a</reason><text_search>{"queries":[{"entity":"A"}]}</text_search>)"),
            ProtocolErrc::MalformedPayload);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[]})"), ProtocolErrc::UnbalancedTags);
  EXPECT_EQ(error_of(R"(<reason>a<answer>{"entities":[]}</answer>)"), ProtocolErrc::UnbalancedTags);
  EXPECT_EQ(error_of(R"(</reason><answer>{"entities":[]}</answer>)"), ProtocolErrc::UnbalancedTags);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[]}</text_search>)"), ProtocolErrc::UnbalancedTags);
  EXPECT_EQ(error_of(R"(hi <reason>a</reason><answer>{"entities":[]}</answer>)"), ProtocolErrc::StrayText);
  EXPECT_EQ(error_of(R"(<reason>a</reason> so <answer>{"entities":[]}</answer>)"), ProtocolErrc::StrayText);
  EXPECT_EQ(error_of(R"(<reason>a</reason><answer>{"entities":[]}</answer> bye)"), ProtocolErrc::StrayText);
}

TEST(Protocol, ErrorOffsetPointsAtViolation) {
  const std::string raw = R"(<reason>a</reason><answer>{"entities":[]}</answer><answer>{"entities":[]}</answer>)";
  auto r = parse_segment(raw);
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().offset, raw.rfind("<answer>"));
}

TEST(Protocol, WhitespaceBetweenBlocksIgnoredReasonVerbatim) {
  auto r = parse_segment("  \n<reason>  keep  this \n</reason>\n\t <answer> {\"entities\": [] } </answer>\n ");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->reason, "  keep  this \n");
}

TEST(Protocol, SerializeCanonicalForm) {
  TurnSegment s;
  s.reason = "R";
  EXPECT_EQ(serialize_segment(s), "<reason>R</reason>\n<answer>{\"entities\":[]}</answer>");
  EXPECT_EQ(serialize_observation({"doc", Modality::Text}), "<information>doc</information>");
}

TEST(Protocol, TagLiteralsInsidePayloadStringsAreEscaped) {
  TurnSegment s;
  s.reason = "tricky";
  s.payload = AnswerPayload{{{"</answer><text_search>", "PER", std::nullopt}}};
  const auto text = serialize_segment(s);
  EXPECT_EQ(text.find("</answer><"), std::string::npos);
  auto r = parse_segment(text);
  ASSERT_TRUE(r);
  EXPECT_EQ(*r, s);
  // Raw tag text inside a JSON string is still a tag to the scanner.
  EXPECT_FALSE(parse_segment(R"(<reason>a</reason><answer>{"entities":[{"span":"</answer>","type":"X","box":null}]}</answer>)"));
}

std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> alphabet = {"a", "b", "c", "X", "Y", "Z", " ", "0", "1", "9", "<", ">", "/",
                                                    "\"", "\\", "{", "}", "[", "]", ":", ",", "\n", "\t", "-",
                                                    "_", "&", "é"};
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::string out;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    out += alphabet[rng() % alphabet.size()];
  }
  return out;
}

TurnSegment random_segment(std::mt19937_64& rng) {
  TurnSegment s;
  do {
    s.reason = random_text(rng, 40);
  } while (contains_protocol_tag(s.reason));
  const int kind = static_cast<int>(rng() % 3);
  auto str = [&] {
    std::string t = random_text(rng, 12);
    return trim(t).empty() ? t + "e" : t;
  };
  if (kind == 2) {
    s.action = ActionKind::Answer;
    AnswerPayload a;
    const auto n = rng() % 4;
    for (std::size_t i = 0; i < n; ++i) {
      Entity e;
      e.span = str();
      e.type = "T" + std::to_string(rng() % 4);
      if (rng() % 3) {
        const double x = static_cast<double>(rng() % 100) / 4.0, y = static_cast<double>(rng() % 100) / 8.0;
        e.region = BBox{x, y, x + 1.5 + static_cast<double>(rng() % 50), y + 0.25 + static_cast<double>(rng() % 50)};
      }
      a.entities.push_back(e);
    }
    s.payload = a;
  } else {
    s.action = kind == 0 ? ActionKind::TextSearch : ActionKind::ImageSearch;
    SearchQuerySet q;
    q.modality = kind == 0 ? Modality::Text : Modality::Image;
    const auto n = 1 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i) q.entries.push_back({str(), str()});
    s.payload = q;
  }
  return s;
}

TEST(Protocol, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 3000; ++i) {
    const auto s = random_segment(rng);
    const auto text = serialize_segment(s);
    auto r = parse_segment(text);
    ASSERT_TRUE(r) << text << " -> " << to_string(r.error().code) << " " << r.error().detail;
    ASSERT_EQ(*r, s) << text;
    ASSERT_EQ(serialize_segment(*r), text);
  }
}

std::size_t count_of(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

TEST(Protocol, FuzzNeverAcceptsWrongBlockCounts) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> pieces = {"<reason>", "</reason>", "<answer>", "</answer>", "<text_search>",
                                           "</text_search>", "<image_search>", "</image_search>", "<information>",
                                           "</information>", "{\"entities\":[]}", "{\"queries\":[]}", " ", "x", "\n",
                                           "{", "\"", "<", ">"};
  for (int i = 0; i < 20000; ++i) {
    std::string raw;
    const auto n = rng() % 12;
    for (std::size_t k = 0; k < n; ++k) {
      if (rng() % 4 == 0) raw += static_cast<char>(rng() % 256);
      else raw += pieces[rng() % pieces.size()];
    }
    auto r = parse_segment(raw);
    if (!r) continue;
    const auto actions = count_of(raw, "<answer>") + count_of(raw, "<text_search>") + count_of(raw, "<image_search>");
    ASSERT_EQ(count_of(raw, "<reason>"), 1u) << raw;
    ASSERT_EQ(actions, 1u) << raw;
  }
}

TEST(Protocol, TruncateAtStop) {
  const auto stops = default_stop_tags();
  EXPECT_EQ(truncate_at_stop("<reason>a</reason><answer>{}</answer> trailing", stops),
            "<reason>a</reason><answer>{}</answer>");
  EXPECT_EQ(truncate_at_stop("no stop here", stops), "no stop here");
  EXPECT_EQ(truncate_at_stop("x</image_search>y</answer>", stops), "x</image_search>");
}

// ---- policy -----------------------------------------------------------------

TEST(Policy, ScriptedReturnsLineVerbatim) {
  const std::string line = "<reason>r</reason>\n<answer>{\"entities\":[]}</answer>";
  ScriptedPolicy p({{"t1", 0, line}});
  GenerateRequest req;
  req.trajectory_id = "t1";
  const auto g = p.generate(req);
  EXPECT_EQ(g.text, line);
  EXPECT_EQ(g.token_count, word_count(line));
}

TEST(Policy, SampleNInOrderAndExhaustion) {
  ScriptedPolicy four({{"s", 0, "a"}, {"s", 1, "b"}, {"s", 2, "c"}, {"s", 3, "d"}});
  GenerateRequest req;
  req.trajectory_id = "s";
  EXPECT_EQ(four.sample_n(req, 4), (std::vector<std::string>{"a", "b", "c", "d"}));

  ScriptedPolicy three({{"s", 0, "a"}, {"s", 1, "b"}, {"s", 2, "c"}});
  try {
    three.sample_n(req, 4);
    FAIL() << "expected FixtureExhausted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "FixtureExhausted");
    EXPECT_EQ(e.kind(), ErrorKind::Upstream);
  }
  EXPECT_THROW(four.sample_n(req, 0), Error);
}

TEST(Policy, ScriptedFallbacksAndReset) {
  ScriptedPolicy p({{"base", 0, "from-base"}, {"*", 0, "wild"}});
  GenerateRequest req;
  req.trajectory_id = "base#3";
  EXPECT_EQ(p.generate(req).text, "from-base");
  req.trajectory_id = "other";
  EXPECT_EQ(p.generate(req).text, "wild");
  EXPECT_THROW(p.generate(req), Error);
  p.reset();
  EXPECT_EQ(p.generate(req).text, "wild");
}

TEST(Policy, AlternativesAreSeedDeterministic) {
  ScriptedPolicy p({{"x", 0, "a"}, {"x", 0, "b"}, {"x", 0, "c"}});
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    GenerateRequest req;
    req.trajectory_id = "x";
    req.seed = seed;
    p.reset();
    const auto first = p.generate(req).text;
    p.reset();
    EXPECT_EQ(p.generate(req).text, first);
    seen.insert(first);
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Policy, ScriptedTruncatesAtStopTag) {
  ScriptedPolicy p({{"x", 0, "<reason>r</reason><answer>{\"entities\":[]}</answer> and more"}});
  GenerateRequest req;
  req.trajectory_id = "x";
  EXPECT_EQ(p.generate(req).text, "<reason>r</reason><answer>{\"entities\":[]}</answer>");
}

TEST(Policy, RemoteStubReturnsBodyVerbatimAndSendsWireFields) {
  httplib::Server server;
  nlohmann::json seen;
  std::string auth;
  server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"text":"<reason>r</reason><answer>{\"entities\":[]}</answer> ignored tail","token_count":7})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemotePolicyConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/generate";
  cfg.model = "m";
  cfg.auth_token = "secret";
  RemotePolicy policy(cfg);
  GenerateRequest req;
  req.trajectory_id = "t";
  req.history = "H";
  req.images = {"img.jpg"};
  req.seed = 9;
  const auto g = policy.generate(req);
  EXPECT_EQ(g.text, "<reason>r</reason><answer>{\"entities\":[]}</answer>");
  EXPECT_EQ(g.token_count, 7u);
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(seen["history"], "H");
  EXPECT_EQ(seen["model"], "m");
  EXPECT_EQ(seen["images"][0], "img.jpg");
  EXPECT_EQ(seen["stop"].size(), 3u);
  EXPECT_EQ(seen["seed"], 9);

  const auto one = policy.sample_n(req, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], g.text);

  server.stop();
  th.join();
  try {
    policy.generate(req);
    FAIL() << "expected an upstream error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Upstream);
  }
}

// ---- rollout ----------------------------------------------------------------

const RolloutInput kInput{"p1", "Bayern won again", "img/p1.jpg"};

TEST(Rollout, ZeroSearchPath) {
  ScriptedPolicy p({{"p1", 0, answer_text("easy", {})}});
  CannedTools tools;
  const auto t = run_rollout(kInput, p, tools, {});
  EXPECT_EQ(t.turns.size(), 1u);
  EXPECT_EQ(t.n_tool_calls, 0u);
  EXPECT_EQ(t.status, TrajectoryStatus::Answered);
  EXPECT_EQ(tools.calls, 0);
}

TEST(Rollout, TextSearchThenAnswerGoldenTranscript) {
  auto index = std::make_shared<LocalIndex>(std::vector<LocalIndex::Document>{
      testing::doc("d1", Modality::Text, "FC Bayern Munich", "German football club based in Munich.",
                   "https://example.org/bayern"),
      testing::doc("d2", Modality::Text, "Munich travel guide", "City guide.", "https://example.org/munich"),
      testing::doc("d3", Modality::Image, "Bayern crest", "Crest image.", "https://example.org/crest", "ref/c.jpg")});
  GatewayTools tools(std::make_shared<SearchGateway>(index));
  ScriptedPolicy p({{"p1", 0, search_text("unsure about Bayern", Modality::Text, {{"Bayern", "FC Bayern Munich"}})},
                    {"p1", 1, answer_text("Bayern is the club.", {{"Bayern", "ORG", BBox{0, 0, 10, 10}}})}});
  const auto t = run_rollout(kInput, p, tools, {});
  EXPECT_EQ(t.turns.size(), 2u);
  EXPECT_EQ(t.n_tool_calls, 1u);
  EXPECT_EQ(t.status, TrajectoryStatus::Answered);

  const std::string expected =
      "Image: img/p1.jpg\n"
      "Text: Bayern won again\n"
      "<reason>unsure about Bayern</reason>\n"
      "<text_search>{\"queries\":[{\"entity\":\"Bayern\",\"q\":\"FC Bayern Munich\"}]}</text_search>"
      "\n<information>\n"
      "Query 1 (entity: Bayern): FC Bayern Munich\n"
      "[1] FC Bayern Munich\n"
      "    German football club based in Munich.\n"
      "    url: https://example.org/bayern\n"
      "[2] Munich travel guide\n"
      "    City guide.\n"
      "    url: https://example.org/munich\n"
      "</information>\n"
      "<reason>Bayern is the club.</reason>\n"
      "<answer>{\"entities\":[{\"span\":\"Bayern\",\"type\":\"ORG\",\"box\":[0.0,0.0,10.0,10.0]}]}</answer>";
  EXPECT_EQ(t.transcript, expected);
  ASSERT_EQ(t.regions.size(), 4u);
  EXPECT_EQ(t.regions[2].kind, RegionKind::Observation);
}

TEST(Rollout, BudgetExhaustedAfterExactlyMCalls) {
  const auto search = search_text("again", Modality::Text, {{"X", "X"}});
  ScriptedPolicy p({{"*", 0, search}, {"*", 1, search}, {"*", 2, search}, {"*", 3, search}, {"*", 4, search}});
  CannedTools tools;
  RolloutConfig cfg;
  cfg.max_actions = 3;
  const auto t = run_rollout(kInput, p, tools, cfg);
  EXPECT_EQ(t.status, TrajectoryStatus::BudgetExhausted);
  EXPECT_EQ(t.n_tool_calls, 3u);
  EXPECT_EQ(tools.calls, 3);
  EXPECT_EQ(t.turns.size(), 3u);
  EXPECT_FALSE(t.final);
}

TEST(Rollout, GarbageEndsInvalidWithFeedbackTwice) {
  FunctionPolicy p([](const GenerateRequest&) { return gen("garbage"); });
  CannedTools tools;
  RolloutConfig cfg;
  cfg.max_invalid_retries = 2;
  const auto t = run_rollout(kInput, p, tools, cfg);
  EXPECT_EQ(t.status, TrajectoryStatus::Invalid);
  EXPECT_EQ(t.turns.size(), 3u);
  EXPECT_EQ(count_of(t.transcript, kInvalidActionFeedback), 2u);
  EXPECT_EQ(t.turns[0].error, "MissingReason");
}

TEST(Rollout, OverlongResponseIsInvalidTurn) {
  int call = 0;
  FunctionPolicy p([&](const GenerateRequest&) {
    if (call++ == 0) return Generation{answer_text("long", {}), 100};
    return gen(answer_text("short", {}));
  });
  CannedTools tools;
  RolloutConfig cfg;
  cfg.max_response_tokens = 50;
  const auto t = run_rollout(kInput, p, tools, cfg);
  ASSERT_EQ(t.turns.size(), 2u);
  EXPECT_EQ(t.turns[0].error, "ResponseTooLong");
  EXPECT_EQ(t.status, TrajectoryStatus::Answered);
  EXPECT_FALSE(t.all_valid());
}

TEST(Rollout, AdversarialPoliciesTerminateAndHistoryGrows) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> menu = {"garbage", search_text("s", Modality::Text, {{"A", "A"}}),
                                         search_text("s", Modality::Image, {{"A", "A"}}), answer_text("a", {}),
                                         "<reason>x</reason>", ""};
  for (int trial = 0; trial < 300; ++trial) {
    RolloutConfig cfg;
    cfg.max_actions = 1 + rng() % 4;
    cfg.max_invalid_retries = rng() % 4;
    std::vector<double> weights = {static_cast<double>(rng() % 5), static_cast<double>(rng() % 5),
                                   static_cast<double>(rng() % 5), static_cast<double>(rng() % 2),
                                   static_cast<double>(rng() % 3), 1.0};
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::mt19937_64 prng(rng());
    FunctionPolicy p([&](const GenerateRequest&) { return gen(menu[pick(prng)]); });
    CannedTools tools;
    const auto t = run_rollout(kInput, p, tools, cfg);
    ASSERT_LE(t.turns.size(), cfg.max_actions + cfg.max_invalid_retries + 1);
    ASSERT_LE(t.n_tool_calls, cfg.max_actions);
    for (std::size_t i = 1; i < p.requests.size(); ++i) {
      const auto& prev = p.requests[i - 1].history;
      const auto& cur = p.requests[i].history;
      ASSERT_GT(cur.size(), prev.size());
      ASSERT_EQ(cur.compare(0, prev.size(), prev), 0);
    }
  }
}

TEST(Rollout, InfrastructureFailuresAbortWithPartialTrajectory) {
  ScriptedPolicy p({{"p1", 0, search_text("s", Modality::Text, {{"A", "A"}})}});
  CannedTools tools;
  tools.fail = true;
  try {
    run_rollout(kInput, p, tools, {});
    FAIL() << "expected RolloutAborted";
  } catch (const RolloutAborted& e) {
    EXPECT_EQ(e.code(), "ToolUnavailable");
    EXPECT_EQ(e.partial().turns.size(), 1u);
  }
  ScriptedPolicy empty({});
  try {
    run_rollout(kInput, empty, tools, {});
    FAIL() << "expected RolloutAborted";
  } catch (const RolloutAborted& e) {
    EXPECT_EQ(e.code(), "FixtureExhausted");
    EXPECT_TRUE(e.partial().turns.empty());
  }
}

std::string dump(const Trajectory& t) { return to_json(t).dump(); }

TEST(Rollout, DeterministicGroupMembersIdentical) {
  ScriptedPolicy p({{"p1", 0, answer_text("same", {{"A", "PER", std::nullopt}})}});
  CannedTools tools;
  const auto group = run_group(kInput, p, tools, {}, 8, 1);
  ASSERT_EQ(group.size(), 8u);
  for (std::size_t i = 0; i < group.size(); ++i) {
    EXPECT_EQ(group[i].id, member_id("p1", i));
    EXPECT_EQ(group[i].transcript, group[0].transcript);
    EXPECT_EQ(group[i].final, group[0].final);
  }
}

std::vector<ScriptedPolicy::Line> stochastic_fixture() {
  return {{"p1", 0, answer_text("a", {})},
          {"p1", 0, search_text("t", Modality::Text, {{"A", "A"}})},
          {"p1", 0, "garbage"},
          {"p1", 1, answer_text("b", {})},
          {"p1", 1, search_text("i", Modality::Image, {{"A", "A photo"}})},
          {"p1", 2, answer_text("c", {})},
          {"p1", 3, answer_text("d", {})},
          {"p1", 4, answer_text("e", {})}};
}

TEST(Rollout, StochasticGroupReplaysByteIdentical) {
  CannedTools tools;
  ScriptedPolicy first(stochastic_fixture());
  ScriptedPolicy second(stochastic_fixture());
  ScriptedPolicy parallel(stochastic_fixture());
  const auto a = run_group(kInput, first, tools, {}, 4, 42);
  const auto b = run_group(kInput, second, tools, {}, 4, 42);
  const auto c = run_group(kInput, parallel, tools, {}, 4, 42, true);
  std::set<std::string> distinct;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(dump(a[i]), dump(b[i]));
    EXPECT_EQ(dump(a[i]), dump(c[i]));
    distinct.insert(a[i].transcript);
  }
  EXPECT_GT(distinct.size(), 1u);
}

TEST(Rollout, GroupOfOneRejected) {
  ScriptedPolicy p(stochastic_fixture());
  CannedTools tools;
  try {
    run_group(kInput, p, tools, {}, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "GroupTooSmall");
  }
}

TEST(Rollout, JsonRoundTrip) {
  CannedTools tools;
  ScriptedPolicy p(stochastic_fixture());
  for (const auto& t : run_group(kInput, p, tools, {}, 6, 5)) {
    const auto back = trajectory_from_json(nlohmann::json::parse(dump(t)));
    EXPECT_EQ(dump(back), dump(t));
  }
}

TEST(Rollout, ReplayReproducesStoredTrajectory) {
  CannedTools tools;
  ScriptedPolicy p(stochastic_fixture());
  const auto group = run_group(kInput, p, tools, {}, 4, 8);
  testing::TempDir dir;
  {
    jsonl::Writer w(dir / "traj.jsonl");
    for (const auto& t : group) w.write(to_json(t));
  }
  auto replay = ReplayPolicy::from_file(dir / "traj.jsonl");
  for (const auto& t : group) {
    const auto again = run_rollout(t.input, *replay, tools, {}, t.id, t.seed);
    EXPECT_EQ(dump(again), dump(t));
  }
}

TEST(Rollout, ScriptedAndLoopbackRemoteAreSubstitutable) {
  CannedTools tools;
  ScriptedPolicy local(stochastic_fixture());
  auto served = std::make_shared<ScriptedPolicy>(stochastic_fixture());
  PolicyServer server(served);
  const int port = server.start();
  RemotePolicyConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/generate";
  RemotePolicy remote(cfg);
  const auto a = run_group(kInput, local, tools, {}, 4, 99);
  const auto b = run_group(kInput, remote, tools, {}, 4, 99);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(dump(a[i]), dump(b[i]));
}

}  // namespace
}  // namespace sake
