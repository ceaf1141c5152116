#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "test_support.hpp"

using namespace tkg;
using namespace tkg::testing;

namespace {

std::vector<EntityId> entities_of(const RankedPredictions& p) {
  std::vector<EntityId> out;
  for (const auto& e : p.entries) out.push_back(e.entity);
  return out;
}

EndpointConfig fast_config(const std::string& url) {
  EndpointConfig cfg;
  cfg.base_url = url;
  cfg.retry_backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(2000);
  return cfg;
}

TransportFactory http_factory(const EndpointConfig& cfg) {
  return [cfg] { return std::make_unique<HttpTransport>(cfg); };
}

/// A port nothing listens on.
int dead_port() {
  mock::Server s;
  const int port = s.start();
  s.stop();
  return port;
}

} // namespace

TEST(Frequency, FixtureQueries) {
  const auto kg = fixture_t1();
  const auto qs = build_queries(kg, Split::test);
  const auto obj = frequency_score(qs[0], select_history(kg, qs[0], 50, SplitScope::train_valid));
  ASSERT_EQ(obj.size(), 2u);
  EXPECT_EQ(obj[0], (ScoredEntity{1, 2.0}));
  EXPECT_EQ(obj[1], (ScoredEntity{2, 1.0}));
  const auto subj = frequency_score(qs[1], select_history(kg, qs[1], 50, SplitScope::train_valid));
  EXPECT_EQ(subj, (std::vector<ScoredEntity>{{0, 2.0}}));
}

TEST(Frequency, BothSlotsSkipsAnchor) {
  const Query q{Direction::object, 0, 0, 9, 1, Split::test, 0};
  const HistoryWindow h{{{0, 0, 1, 1}, {2, 0, 0, 2}, {0, 0, 0, 3}}, 50};
  EXPECT_EQ(entities_of(top_entities(frequency_score(q, h))), (std::vector<EntityId>{0, 1}));
  EXPECT_EQ(entities_of(top_entities(frequency_score(q, h, FrequencyMode::both_slots))), (std::vector<EntityId>{2, 1}));
  EXPECT_THROW(parse_frequency_mode("all"), ConfigError);
}

TEST(Frequency, EmptyHistoryGivesNothing) {
  const Query q{Direction::object, 0, 0, 9, 1, Split::test, 0};
  EXPECT_TRUE(frequency_score(q, {}).empty());
}

TEST(Normalize, AcceptsOnlyDecimalIds) {
  EXPECT_EQ(normalize_answer(" 12"), 12u);
  EXPECT_EQ(normalize_answer("12\n"), 12u);
  EXPECT_EQ(normalize_answer("4294967295"), 4294967295u);
  EXPECT_FALSE(normalize_answer("4294967296"));
  EXPECT_FALSE(normalize_answer("99999999999"));
  EXPECT_FALSE(normalize_answer("1 2"));
  EXPECT_FALSE(normalize_answer("-1"));
  EXPECT_FALSE(normalize_answer("+1"));
  EXPECT_FALSE(normalize_answer("1.0"));
  EXPECT_FALSE(normalize_answer(""));
  EXPECT_FALSE(normalize_answer("   "));
  EXPECT_FALSE(normalize_answer("<|eot_id|>"));
  EXPECT_TRUE(is_none_answer(" None"));
  EXPECT_FALSE(is_none_answer("none"));
}

TEST(RankPredictions, FiltersAndCounts) {
  const auto kg = fixture_t1();
  const auto m = AnonymizationMapping{Strategy::fid, MappingScope::per_sample,
                                      IdMap::from_pairs({{2, 0}, {0, 1}}), IdMap::identity(2), 0};
  const std::vector<RawCandidate> raw{
      {"x", 0.05}, {" 1", 0.2}, {"None", 0.5}, {"1", 0.1}, {"7", 0.04}, {"0", 0.03}, {"2", -std::numeric_limits<double>::infinity()}};
  const auto r = rank_predictions(raw, m, kg);
  EXPECT_EQ(entities_of(r.predictions), (std::vector<EntityId>{0, 2}));
  EXPECT_DOUBLE_EQ(r.predictions.entries[0].score, 0.2);
  EXPECT_TRUE(r.diagnostics.abstained);
  EXPECT_EQ(r.diagnostics.none, 1u);
  EXPECT_EQ(r.diagnostics.duplicates, 1u);
  EXPECT_EQ(r.diagnostics.non_numeric, 2u);
  EXPECT_EQ(r.diagnostics.out_of_range, 1u);
}

TEST(RankPredictions, CapsAtTen) {
  std::vector<std::string> names(30, "e");
  const auto kg = TemporalKG::from_parts("big", names, {"r"}, {}, {}, {});
  std::vector<RawCandidate> raw;
  for (int i = 0; i < 15; ++i) raw.push_back({std::to_string(i), 1.0 - i * 0.01});
  const auto r = rank_predictions(raw, assign_gid(kg), kg);
  EXPECT_EQ(r.predictions.entries.size(), 10u);
  EXPECT_EQ(r.diagnostics.truncated, 5u);
  EXPECT_EQ(r.predictions.entries.back().entity, 9u);
  EXPECT_FALSE(r.diagnostics.abstained);
}

// Random candidate lists against a set-based oracle.
TEST(RankPredictionsProperty, MatchesOracle) {
  Rng rng(123);
  const std::vector<std::string> junk{"None", " None", "<|eot_id|>", "abc", "-3", "", " ", "1.5"};
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t ne = 1 + rng.below(40);
    const auto kg = TemporalKG::from_parts("p", std::vector<std::string>(ne, "e"), {"r"}, {}, {}, {});
    // Random partial injection of entities into abstract ids.
    std::vector<std::uint32_t> keys(ne);
    for (std::size_t i = 0; i < ne; ++i) keys[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(keys);
    keys.resize(1 + rng.below(ne));
    std::vector<std::pair<std::uint32_t, AbstractId>> pairs;
    for (std::size_t i = 0; i < keys.size(); ++i) pairs.emplace_back(keys[i], static_cast<AbstractId>(i));
    const AnonymizationMapping m{Strategy::rid, MappingScope::per_sample, IdMap::from_pairs(pairs), IdMap::identity(1), 0};

    std::vector<RawCandidate> raw;
    const std::size_t n = rng.below(25);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = static_cast<double>(rng.below(1000)) / 1000.0;
      if (rng.below(4) == 0) {
        raw.push_back({junk[rng.below(junk.size())], p});
      } else {
        std::string tok = std::to_string(rng.below(ne + 5));
        if (rng.below(2)) tok = " " + tok;
        raw.push_back({tok, p});
      }
    }

    // Oracle: sort a copy by score (stable), then greedily accept.
    auto sorted = raw;
    std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.score > b.score; });
    std::vector<EntityId> expected;
    for (const auto& c : sorted) {
      std::string t = c.answer;
      t.erase(0, t.find_first_not_of(' '));
      if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) continue;
      const auto id = std::stoul(t);
      std::optional<EntityId> ent;
      for (auto [k, v] : pairs)
        if (v == id) ent = k;
      if (!ent || std::find(expected.begin(), expected.end(), *ent) != expected.end()) continue;
      if (expected.size() < 10) expected.push_back(*ent);
    }

    const auto r = rank_predictions(raw, m, kg);
    ASSERT_EQ(entities_of(r.predictions), expected) << "trial " << trial;
    for (std::size_t i = 1; i < r.predictions.entries.size(); ++i)
      ASSERT_GE(r.predictions.entries[i - 1].score, r.predictions.entries[i].score);
    ASSERT_EQ(r.diagnostics.abstained, !sorted.empty() && is_none_answer(sorted.front().answer));
  }
}

TEST(Logprobs, ParsesBothResponseShapes) {
  const json classic = json::parse(R"({"choices":[{"logprobs":{"top_logprobs":[{"1":-0.1,"None":-3.0," 2":-1.0}]}}]})");
  const auto a = parse_top_logprobs(classic);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].answer, "1");
  EXPECT_NEAR(a[0].score, std::exp(-0.1), 1e-12);
  EXPECT_EQ(a[1].answer, " 2");

  const json chat = json::parse(
      R"({"choices":[{"logprobs":{"content":[{"token":"4","logprob":-0.5,"top_logprobs":[{"token":"4","logprob":-0.5},{"token":"7","logprob":-2.0}]}]}}]})");
  const auto b = parse_top_logprobs(chat);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].answer, "7");

  EXPECT_THROW(parse_top_logprobs(json::parse(R"({"choices":[{"text":"1","logprobs":null}]})")), CapabilityError);
  EXPECT_THROW(parse_top_logprobs(json::parse(R"({"choices":[]})")), CapabilityError);
}

TEST(MockModel, CandidatesFollowHistoryCounts) {
  const std::string prompt = "History:\n3:[0,0,1]\n2:[0,0,2]\n1:[0,0,1]\nQuery:\n0:[0,0,?]\nAnswer:\n";
  const auto c = mock::candidates_for(prompt);
  ASSERT_GE(c.size(), 2u);
  EXPECT_EQ(c[0].token, "1");
  EXPECT_EQ(c[1].token, " 2");
  const auto subj = mock::candidates_for("History:\n1:[5,0,0]\nQuery:\n0:[?,0,0]\nAnswer:\n");
  EXPECT_EQ(subj[0].token, "5");
  EXPECT_EQ(mock::candidates_for("History:\nQuery:\n0:[?,0,0]\nAnswer:\n")[0].token, "None");
}

TEST(Endpoint, ScoresThroughHttp) {
  mock::Server server;
  server.start();
  const auto cfg = fast_config(server.base_url());
  const auto kg = fixture_t1();
  const auto q = build_queries(kg, Split::test)[0];
  const auto s = forge_sample(kg, q, select_history(kg, q, 50, SplitScope::train_valid),
                              {Stage::specific, Strategy::gid, {}, {}}, {});
  const auto raw = llm_score(s.input_text, cfg);
  ASSERT_FALSE(raw.empty());
  EXPECT_EQ(raw[0].answer, "1");
  EXPECT_EQ(server.requests(), 1u);
}

TEST(Endpoint, RetriesTransientFailures) {
  mock::Server server({true, 2});
  server.start();
  auto cfg = fast_config(server.base_url());
  HttpTransport t(cfg);
  const auto out = llm_score_with(t, "History:\nQuery:\n0:[0,0,?]\nAnswer:\n", cfg);
  EXPECT_TRUE(out.candidates);
  EXPECT_EQ(out.attempts, 3u);

  mock::Server flaky({true, 10});
  flaky.start();
  cfg = fast_config(flaky.base_url());
  cfg.retry_budget = 1;
  HttpTransport t2(cfg);
  const auto failed = llm_score_with(t2, "x", cfg);
  EXPECT_FALSE(failed.candidates);
  EXPECT_EQ(failed.attempts, 2u);
  EXPECT_NE(failed.error.find("503"), std::string::npos);
}

TEST(Endpoint, MissingLogprobsIsACapabilityError) {
  mock::Server server({false, 0});
  server.start();
  const auto cfg = fast_config(server.base_url());
  EXPECT_THROW(llm_score("History:\nQuery:\n0:[0,0,?]\nAnswer:\n", cfg), CapabilityError);
  const std::vector<std::string> prompts(5, "History:\nQuery:\n0:[0,0,?]\nAnswer:\n");
  EXPECT_THROW(llm_score_batch(prompts, cfg, http_factory(cfg)), CapabilityError);
}

TEST(Endpoint, DownEndpointFailsEachQueryThenStopsDispatching) {
  auto cfg = fast_config("http://127.0.0.1:" + std::to_string(dead_port()) + "/v1");
  cfg.retry_budget = 0;
  cfg.max_in_flight = 1;
  cfg.max_consecutive_failures = 3;
  const std::vector<std::string> prompts(8, "p");
  const auto out = llm_score_batch(prompts, cfg, http_factory(cfg));
  ASSERT_EQ(out.size(), 8u);
  std::size_t attempted = 0, skipped = 0;
  for (const auto& o : out) {
    EXPECT_FALSE(o.candidates);
    EXPECT_FALSE(o.error.empty());
    (o.attempts > 0 ? attempted : skipped)++;
  }
  EXPECT_EQ(attempted, 3u);
  EXPECT_EQ(skipped, 5u);
  EXPECT_THROW(llm_score("p", cfg), EndpointError);
}

TEST(Endpoint, ReplayReproducesRecordedRun) {
  mock::Server server;
  server.start();
  auto cfg = fast_config(server.base_url());
  cfg.max_in_flight = 3;
  TempDir dir("replay");
  const auto log = (dir / "replay.jsonl").string();
  const auto kg = synthetic_kg({.test = 20});
  RunOptions opts;
  opts.forge.strategy = Strategy::rid;
  opts.seed = 4;
  std::vector<QueryResult> live;
  {
    ReplayRecorder rec(log);
    live = run_llm(kg, opts, cfg, http_factory(cfg), &rec);
  }
  const auto table = ReplayTransport::load(log);
  const auto replayed = run_llm(kg, opts, cfg, [table] { return std::make_unique<ReplayTransport>(table); });
  ASSERT_EQ(live.size(), replayed.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    EXPECT_TRUE(live[i].scored);
    EXPECT_EQ(live[i].predictions, replayed[i].predictions);
    EXPECT_EQ(live[i].raw, replayed[i].raw);
  }
}

// The mock reproduces the frequency baseline for every query with history
// whose answer candidates are all non-anchor: same entities, same order.
TEST(EndpointProperty, MockMatchesFrequencyUnderFid) {
  mock::Server server;
  server.start();
  auto cfg = fast_config(server.base_url());
  cfg.top_logprobs = 100;
  const auto kg = synthetic_kg({.entities = 30, .train = 300, .test = 30, .seed = 8});
  RunOptions opts;
  opts.forge.strategy = Strategy::fid;
  opts.forge.stage = Stage::general;
  const auto llm = run_llm(kg, opts, cfg, http_factory(cfg));
  const auto freq = run_frequency(kg, opts);
  ASSERT_EQ(llm.size(), freq.size());
  std::size_t compared = 0;
  for (std::size_t i = 0; i < llm.size(); ++i) {
    const auto h = select_history(kg, llm[i].query, 50, SplitScope::train_valid);
    bool anchor_in_slot = false;
    for (const auto& f : h.facts) anchor_in_slot |= answer_slot(f, llm[i].query.direction) == llm[i].query.anchor;
    // With no history the mock guesses "0", which is the anchor.
    if (anchor_in_slot || h.facts.empty()) continue;
    ++compared;
    EXPECT_EQ(entities_of(llm[i].predictions), entities_of(freq[i].predictions)) << "query " << i;
  }
  EXPECT_GT(compared, 20u);
}
