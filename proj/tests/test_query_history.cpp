#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace tkg;
using namespace tkg::testing;

TEST(BuildQueries, FixtureTestSplitBothDirections) {
  const auto kg = fixture_t1();
  const auto qs = build_queries(kg, Split::test);
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0], (Query{Direction::object, 0, 0, 2, 1, Split::test, 0}));
  EXPECT_EQ(qs[1], (Query{Direction::subject, 1, 0, 2, 0, Split::test, 1}));
}

TEST(BuildQueries, CountsAndDirectionSubsets) {
  const auto kg = synthetic_kg({});
  EXPECT_EQ(build_queries(kg, Split::valid).size(), 2 * kg.facts(Split::valid).size());
  const auto obj = build_queries(kg, Split::train, DirectionSet::parse("object"));
  EXPECT_EQ(obj.size(), kg.facts(Split::train).size());
  for (const auto& q : obj) EXPECT_EQ(q.direction, Direction::object);
  const auto subj = build_queries(kg, Split::train, DirectionSet::parse("subject"));
  for (std::size_t i = 0; i < subj.size(); ++i) {
    EXPECT_EQ(subj[i].anchor, kg.facts(Split::train)[i].object);
    EXPECT_EQ(subj[i].gold, kg.facts(Split::train)[i].subject);
    EXPECT_EQ(subj[i].ordinal, i);
  }
  EXPECT_THROW(DirectionSet::parse("sideways"), ConfigError);
}

TEST(BuildQueries, EmptySplit) {
  EXPECT_TRUE(build_queries(fixture_t1(), Split::valid).empty());
}

TEST(SelectHistory, FixtureExamples) {
  const auto kg = fixture_t1();
  const auto qs = build_queries(kg, Split::test);
  EXPECT_EQ(select_history(kg, qs[0], 50, SplitScope::train_valid).facts, (std::vector<Quadruple>{f1, f2, f3}));
  EXPECT_EQ(select_history(kg, qs[1], 50, SplitScope::train_valid).facts, (std::vector<Quadruple>{f1, f3}));

  Query at_zero = qs[0];
  at_zero.time = 0;
  EXPECT_TRUE(select_history(kg, at_zero, 50, SplitScope::all).facts.empty());
}

TEST(SelectHistory, KeepsMostRecentAndDuplicates) {
  const auto kg = TemporalKG::from_parts(
      "dup", {"a", "b", "c"}, {"r"}, {{0, 0, 1, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 2, 2}, {0, 0, 2, 3}}, {}, {});
  const Query q{Direction::object, 0, 0, 4, 1, Split::test, 0};
  EXPECT_EQ(select_history(kg, q, 3, SplitScope::train).facts,
            (std::vector<Quadruple>{{0, 0, 1, 1}, {0, 0, 2, 2}, {0, 0, 2, 3}}));
  EXPECT_EQ(select_history(kg, q, 50, SplitScope::train).facts.size(), 5u);
  EXPECT_TRUE(select_history(kg, q, 0, SplitScope::train).facts.empty());
  const HistoryIndex index(kg, SplitScope::train);
  EXPECT_EQ(index.select(q, 3).facts, select_history(kg, q, 3, SplitScope::train).facts);
}

TEST(SelectHistory, DefaultScopes) {
  EXPECT_EQ(default_scope(Split::train), SplitScope::train);
  EXPECT_EQ(default_scope(Split::valid), SplitScope::train_valid);
  EXPECT_EQ(default_scope(Split::test), SplitScope::train_valid);
}

// 10^3 random small TKGs: linear scan and index both equal the oracle.
TEST(SelectHistoryProperty, MatchesBruteForceOracle) {
  Rng rng(20240611);
  for (int trial = 0; trial < 1000; ++trial) {
    SyntheticSpec spec;
    spec.entities = 2 + rng.below(8);
    spec.relations = 1 + rng.below(3);
    spec.train = rng.below(40);
    spec.valid = rng.below(10);
    spec.test = 1 + rng.below(10);
    spec.times = 5 + rng.below(10);
    spec.seed = rng.below(1u << 30);
    const auto kg = synthetic_kg(spec);
    const std::size_t limit = rng.below(8);
    const auto scope = static_cast<SplitScope>(rng.below(3));
    const HistoryIndex index(kg, scope);
    for (auto split : {Split::train, Split::valid, Split::test}) {
      for (const auto& q : build_queries(kg, split)) {
        const auto expected = history_oracle(kg, q, limit, scope);
        const auto linear = select_history(kg, q, limit, scope);
        const auto fast = index.select(q, limit);
        ASSERT_EQ(linear.facts, expected) << "trial " << trial;
        ASSERT_EQ(fast.facts, expected) << "trial " << trial;
        ASSERT_LE(fast.facts.size(), limit);
        for (const auto& f : fast.facts) {
          ASSERT_LT(f.time, q.time);
          ASSERT_TRUE(touches_anchor(f, q));
        }
        // Truncation keeps the maximum-time suffix.
        const auto all = history_oracle(kg, q, SIZE_MAX, scope);
        if (all.size() > limit && limit > 0) {
          ASSERT_GE(fast.facts.front().time, all[all.size() - limit - 1].time);
        }
      }
    }
  }
}
