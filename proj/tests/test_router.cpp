#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "agentsim/router.hpp"
#include "oracles.hpp"

namespace agentsim {
namespace {

TEST(ChooseInstance, WorkedExamples) {
  RouterConfig cfg;
  const std::vector<Tokens> a = {60'000, 10'000, 0, 0};
  EXPECT_EQ(choose_instance(a, 100'000, cfg), 1u);
  const std::vector<Tokens> b = {60'000, 55'000, 70'000, 52'000};
  EXPECT_EQ(choose_instance(b, 100'000, cfg), 3u);
  const std::vector<Tokens> c = {0, 0, 0, 0};
  EXPECT_EQ(choose_instance(c, 100'000, cfg), 0u);
  const std::vector<Tokens> tie = {70'000, 60'000, 60'000};
  EXPECT_EQ(choose_instance(tie, 100'000, cfg), 1u);
  EXPECT_THROW(choose_instance({}, 100'000, cfg), ConfigError);
}

TEST(ChooseInstance, MatchesOracleOnRandomVectors) {
  std::mt19937_64 rng(41);
  RouterConfig cfg;
  const Tokens capacity = 100'000;
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::size_t n = 4 + rng() % 13;
    std::vector<Tokens> u(n);
    for (auto& x : u) x = static_cast<Tokens>(rng() % (2 * capacity));
    if (trial % 3 == 0) {
      for (auto& x : u) x = static_cast<Tokens>(rng() % (capacity / 2));
    }
    ASSERT_EQ(choose_instance(u, capacity, cfg), oracle::assign(u, capacity, 0.5));
  }
}

TEST(ChooseInstance, ConsolidatesOnLowestIdWhenAllLight) {
  std::mt19937_64 rng(43);
  RouterConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Tokens> u(1 + rng() % 16);
    for (auto& x : u) x = static_cast<Tokens>(rng() % 50'000);
    ASSERT_EQ(choose_instance(u, 100'000, cfg), 0u);
  }
}

TEST(ReassignTarget, WorkedExamples) {
  RouterConfig cfg;
  std::uint32_t s = 6;
  const std::vector<Tokens> far = {80'000, 30'000};
  EXPECT_FALSE(reassign_target(s, 0, far, cfg).has_value());
  EXPECT_EQ(s, 7u);

  s = 7;
  EXPECT_EQ(reassign_target(s, 0, far, cfg), std::optional<InstanceId>(1));
  EXPECT_EQ(s, 0u);

  s = 7;
  const std::vector<Tokens> near = {80'000, 50'000};
  EXPECT_FALSE(reassign_target(s, 0, near, cfg).has_value());
  EXPECT_EQ(s, 0u);
}

TEST(ReassignTarget, ProseCounterReadingKeepsCountingWithoutMove) {
  RouterConfig cfg;
  cfg.reset_only_on_reassign = true;
  std::uint32_t s = 7;
  const std::vector<Tokens> near = {80'000, 50'000};
  EXPECT_FALSE(reassign_target(s, 0, near, cfg).has_value());
  EXPECT_EQ(s, 8u);
  const std::vector<Tokens> far = {80'000, 30'000};
  EXPECT_TRUE(reassign_target(s, 0, far, cfg).has_value());
  EXPECT_EQ(s, 0u);
}

TEST(ReassignTarget, ZeroMinimumUsageTriggersMove) {
  RouterConfig cfg;
  std::uint32_t s = 7;
  const std::vector<Tokens> u = {10, 0};
  EXPECT_EQ(reassign_target(s, 0, u, cfg), std::optional<InstanceId>(1));
}

TEST(ReassignTarget, MatchesOracleOnRandomSequences) {
  std::mt19937_64 rng(47);
  RouterConfig cfg;
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::size_t n = 4 + rng() % 13;
    std::vector<Tokens> u(n);
    for (auto& x : u) x = static_cast<Tokens>(rng() % 200'000);
    std::uint32_t s = static_cast<std::uint32_t>(rng() % cfg.reassign_interval);
    std::uint32_t s_oracle = s;
    const std::size_t current = rng() % n;
    const auto got = reassign_target(s, static_cast<InstanceId>(current), u, cfg);
    const auto want = oracle::reassign(s_oracle, current, u, cfg.reassign_interval,
                                      cfg.imbalance_ratio);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      ASSERT_EQ(*got, *want);
    }
    ASSERT_EQ(s, s_oracle);
  }
}

TEST(ReassignTarget, ChecksRunEveryIntervalTurns) {
  RouterConfig cfg;
  std::uint32_t s = 0;
  const std::vector<Tokens> u = {100, 100};
  std::vector<int> check_turns;
  for (int turn = 1; turn <= 40; ++turn) {
    const std::uint32_t before = s;
    reassign_target(s, 0, u, cfg);
    if (s == 0 && before + 1 >= cfg.reassign_interval) check_turns.push_back(turn);
  }
  ASSERT_EQ(check_turns.size(), 5u);
  for (std::size_t i = 1; i < check_turns.size(); ++i)
    EXPECT_EQ(check_turns[i] - check_turns[i - 1], static_cast<int>(cfg.reassign_interval));
}

TEST(RouterState, RoundRobinCycles) {
  RouterConfig cfg;
  cfg.policy = RoutingPolicy::round_robin;
  RouterState r(4, cfg);
  const std::vector<Tokens> u(4, 0);
  std::vector<InstanceId> got;
  for (AgentIndex a = 0; a < 5; ++a) got.push_back(r.assign_agent(a, u, 100'000));
  EXPECT_EQ(got, (std::vector<InstanceId>{0, 1, 2, 3, 0}));

  RouterState one(1, cfg);
  const std::vector<Tokens> u1(1, 0);
  for (AgentIndex a = 0; a < 3; ++a) EXPECT_EQ(one.assign_agent(a, u1, 100'000), 0u);
}

TEST(RouterState, AssignmentResetsCounterAndRecordsPlacement) {
  RouterConfig cfg;
  RouterState r(3, cfg);
  const std::vector<Tokens> u = {60'000, 70'000, 10'000};
  EXPECT_EQ(r.assign_agent(5, u, 100'000), 2u);
  EXPECT_EQ(r.placement(5), std::optional<InstanceId>(2));
  EXPECT_EQ(r.steps(5), 0u);
  for (int k = 0; k < 7; ++k) EXPECT_FALSE(r.maybe_reassign(5, u).has_value());
  EXPECT_EQ(r.steps(5), 7u);
  const std::vector<Tokens> shifted = {60'000, 70'000, 200'000};
  EXPECT_EQ(r.maybe_reassign(5, shifted), std::optional<InstanceId>(0));
  EXPECT_EQ(r.placement(5), std::optional<InstanceId>(0));
  EXPECT_THROW(r.maybe_reassign(99, u), SimLogicError);
}

TEST(RouterState, LeastLoadedPicksArgmin) {
  RouterConfig cfg;
  cfg.policy = RoutingPolicy::least_loaded;
  RouterState r(3, cfg);
  const std::vector<Tokens> u = {10, 5, 5};
  EXPECT_EQ(r.assign_agent(0, u, 100), 1u);
}

TEST(MigrateContext, ConservesTokens) {
  InstanceState from(0, 100'000, Level{1});
  InstanceState to(1, 100'000, Level{1});
  AgentRuntimeState a;
  a.agent = 3;
  a.context_tokens = 40'000;
  a.steps_since_assignment = 5;
  from.admit(3, 40'000);
  from.admit(4, 1'000);
  migrate_context(a, from, to);
  EXPECT_EQ(from.context_usage(), 1'000);
  ASSERT_EQ(to.pending().size(), 1u);
  EXPECT_EQ(to.pending()[0].resumed_context, 40'000);
  EXPECT_EQ(a.instance, 1u);
  EXPECT_EQ(a.steps_since_assignment, 0u);
  to.admit(3, 40'000);
  EXPECT_EQ(from.context_usage() + to.context_usage(), 41'000);
  EXPECT_THROW(migrate_context(a, to, to), SimLogicError);
  InstanceState other(2, 100'000, Level{1});
  AgentRuntimeState ghost;
  ghost.agent = 77;
  EXPECT_THROW(migrate_context(ghost, other, from), SimLogicError);
}

TEST(RouterConfig, Validation) {
  RouterConfig c;
  c.consolidation_threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RouterConfig{};
  c.imbalance_ratio = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RouterConfig{};
  c.reassign_interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_routing_policy("round-robin"), RoutingPolicy::round_robin);
  EXPECT_THROW(parse_routing_policy("random"), ConfigError);
}

}  // namespace
}  // namespace agentsim
