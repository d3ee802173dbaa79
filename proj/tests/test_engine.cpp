#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "agentsim/engine.hpp"
#include "agentsim/metrics.hpp"
#include "agentsim/workload.hpp"

namespace agentsim {
namespace {

SimConfig plain_config(double duration) {
  SimConfig c;
  c.duration = duration;
  c.instance.batch_interference.knee = 0.0;
  c.instance.max_batch = 0;
  return c;
}

// Two levels: the low one runs at half the token rates of the high one.
FrequencyTable two_level_table() {
  return FrequencyTable({{800, 1000, 100, 150, 50}, {1600, 2000, 200, 400, 50}});
}

const AgentOutcome& outcome(const SimulationResult& r, const std::string& id) {
  const auto it = std::find_if(r.agents.begin(), r.agents.end(),
                               [&](const auto& a) { return a.agent_id == id; });
  if (it == r.agents.end()) throw std::runtime_error("no agent " + id);
  return *it;
}

TEST(RunSimulation, SingleTurnAtTopLevel) {
  SimConfig cfg = plain_config(100.0);
  cfg.controller.mode = ControllerMode::off;
  const std::vector<AgentTrace> agents = {{"a", 5.0, {{100, 50, 0.0}}}};
  const auto r = run_simulation(cfg, agents);
  const auto& top = cfg.instance.frequency_table[cfg.instance.frequency_table.top()];
  const double s = 100.0 / top.prefill_rate + 50.0 / top.decode_rate;
  const auto& a = outcome(r, "a");
  ASSERT_TRUE(a.completion_time.has_value());
  EXPECT_NEAR(*a.completion_time, 5.0 + s, 1e-12);
  EXPECT_NEAR(a.total_llm_time, s, 1e-12);
  const double expected_power = (top.idle_power * (100.0 - s) + top.active_power * s) / 100.0;
  EXPECT_NEAR(integrate_power(r.power, r.window), expected_power, 1e-9);
}

TEST(RunSimulation, ZeroAgentsDrawIdlePower) {
  for (const auto mode : {ControllerMode::off, ControllerMode::fixed, ControllerMode::context_aware}) {
    SimConfig cfg = plain_config(500.0);
    cfg.instances = 3;
    cfg.controller.mode = mode;
    const auto r = run_simulation(cfg, {});
    EXPECT_DOUBLE_EQ(integrate_power(r.power, r.window), 3 * 50.0);
    EXPECT_TRUE(r.agents.empty());
  }
}

TEST(RunSimulation, ToolTimeSeparatesTurns) {
  SimConfig cfg = plain_config(100.0);
  cfg.controller.mode = ControllerMode::off;
  cfg.instance.frequency_table = FrequencyTable({{800, 5000, 500, 150, 50}, {1600, 10000, 1000, 400, 50}});
  // 1000 / 10000 + 100 / 1000 = 0.2 s per turn.
  const std::vector<AgentTrace> agents = {{"a", 0.0, {{1000, 100, 1.0}, {1000, 100, 0.0}}}};
  const auto r = run_simulation(cfg, agents);
  const auto& a = outcome(r, "a");
  ASSERT_EQ(a.turn_llm_times.size(), 2u);
  EXPECT_NEAR(a.turn_llm_times[0], 0.2, 1e-12);
  EXPECT_NEAR(*a.completion_time, 0.2 + 1.0 + 0.2, 1e-12);
  EXPECT_EQ(a.context_tokens, 2200);
}

TEST(RunSimulation, BoostHalfwayThroughTurnRetimesRemainingWork) {
  SimConfig cfg = plain_config(20.0);
  cfg.instance.frequency_table = two_level_table();
  cfg.controller.slo_target = 1000.0;  // any agent with data triggers the boost
  // Both agents are admitted at the epoch at t=1 with usage 0, so level 1.
  // "fast" finishes (100, 10) in 0.1 + 0.1 = 0.2 s and then idles in its tool.
  // "slow" needs 2.0 s at level 1; by the boost at t=2 half of it is done and
  // the other half takes 1.0 / 2 = 0.5 s at level 2.
  const std::vector<AgentTrace> agents = {{"fast", 0.0, {{100, 10, 50.0}, {1, 1, 0.0}}},
                                          {"slow", 0.0, {{1000, 100, 0.0}}}};
  const auto r = run_simulation(cfg, agents);
  ASSERT_EQ(outcome(r, "fast").turn_llm_times.size(), 1u);
  EXPECT_NEAR(outcome(r, "fast").turn_llm_times[0], 0.2, 1e-12);
  const auto& slow = outcome(r, "slow");
  ASSERT_TRUE(slow.completion_time.has_value());
  EXPECT_NEAR(*slow.completion_time, 2.5, 1e-9);
  EXPECT_NEAR(slow.total_llm_time, 1.5, 1e-9);
  const auto boost = std::find_if(r.decisions.begin(), r.decisions.end(),
                                  [](const auto& d) { return d.boosted; });
  ASSERT_NE(boost, r.decisions.end());
  EXPECT_EQ(boost->time, 2.0);
}

TEST(RunSimulation, ThrashThenLevelChangeMidTurn) {
  SimConfig cfg = plain_config(20.0);
  cfg.instance.frequency_table = two_level_table();
  cfg.instance.capacity_tokens = 100;
  cfg.controller.alpha = 1.0;
  cfg.controller.boost = false;
  // "fast" adds 110 tokens at t=1.2, pushing usage over capacity 100.
  // "slow" (2.0 s at level 1, 1.0 s at level 2):
  //   [1.0, 1.2] level 1, no thrash:  0.2 / 2.0       = 10% of the work
  //   [1.2, 2.0] level 1, thrash x3:  0.8 / (2.0 * 3) = 13.33...%
  //   from 2.0   level 2, thrash x3:  remaining 76.66...% * 1.0 * 3 = 2.3 s
  const std::vector<AgentTrace> agents = {{"fast", 0.0, {{100, 10, 50.0}, {1, 1, 0.0}}},
                                          {"slow", 0.0, {{1000, 100, 0.0}}}};
  const auto r = run_simulation(cfg, agents);
  const auto& slow = outcome(r, "slow");
  ASSERT_TRUE(slow.completion_time.has_value());
  EXPECT_NEAR(*slow.completion_time, 4.3, 1e-9);
  EXPECT_NEAR(slow.total_llm_time, 3.3, 1e-9);
}

TEST(RunSimulation, MigrationDelayPostponesNextTurn) {
  SimConfig cfg = plain_config(60.0);
  cfg.instances = 2;
  cfg.instance.capacity_tokens = 1000;
  cfg.router.reassign_interval = 1;
  cfg.router.migration_delay = 5.0;
  // "x" fills instance 0 past the consolidation threshold, so "y" lands on
  // instance 1. When "x" issues its second turn, instance 0 holds 610 tokens
  // against 2 on instance 1 and "x" moves there.
  const std::vector<AgentTrace> agents = {{"x", 0.0, {{600, 10, 3.0}, {10, 10, 0.0}}},
                                          {"y", 2.0, {{1, 1, 100.0}, {1, 1, 0.0}}}};
  const auto r = run_simulation(cfg, agents);
  const auto& x = outcome(r, "x");
  EXPECT_EQ(outcome(r, "y").instance, 1u);
  EXPECT_EQ(x.migrations, 1u);
  EXPECT_EQ(x.instance, 1u);
  ASSERT_TRUE(x.completion_time.has_value());
  ASSERT_EQ(x.turn_llm_times.size(), 2u);
  const double tool_done = 1.0 + x.turn_llm_times[0] + 3.0;
  EXPECT_NEAR(*x.completion_time - x.turn_llm_times[1], tool_done + 5.0, 1e-9);
}

TEST(RunSimulation, RejectsUnsortedTrace) {
  const std::vector<AgentTrace> agents = {{"a", 5.0, {{1, 1, 0}}}, {"b", 1.0, {{1, 1, 0}}}};
  EXPECT_THROW(run_simulation(plain_config(10.0), agents), ValidationError);
}

TEST(RunSimulation, InvalidConfigRejectedBeforeRunning) {
  SimConfig cfg = plain_config(10.0);
  cfg.controller.gamma = 0.99;
  EXPECT_THROW(run_simulation(cfg, {}), ConfigError);
}

WorkloadSpec busy_spec(std::uint64_t seed) {
  WorkloadSpec s;
  s.arrival_rate = 0.1;
  s.duration = 1800.0;
  s.seed = seed;
  return s;
}

TEST(RunSimulation, DeterministicForSameInput) {
  SimConfig cfg;
  cfg.duration = 1800.0;
  cfg.instances = 2;
  const auto agents = generate_workload(busy_spec(3));
  const auto a = run_simulation(cfg, agents);
  const auto b = run_simulation(cfg, agents);
  ASSERT_EQ(a.agents.size(), b.agents.size());
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    EXPECT_EQ(a.agents[i].completion_time, b.agents[i].completion_time);
    EXPECT_EQ(a.agents[i].turn_llm_times, b.agents[i].turn_llm_times);
  }
  EXPECT_EQ(integrate_power(a.power, a.window), integrate_power(b.power, b.window));
  EXPECT_EQ(a.final_pending, b.final_pending);
}

class WorkConservation : public ::testing::TestWithParam<std::tuple<ControllerMode, RoutingPolicy, std::size_t>> {};

TEST_P(WorkConservation, TurnsAndTokensReconcileWithTrace) {
  const auto [mode, policy, instances] = GetParam();
  SimConfig cfg;
  cfg.duration = 1800.0;
  cfg.instances = instances;
  cfg.controller.mode = mode;
  cfg.router.policy = policy;
  cfg.router.migration_delay = 0.5;
  const auto traces = generate_workload(busy_spec(5));
  const auto r = run_simulation(cfg, traces);
  ASSERT_EQ(r.agents.size(), traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    const auto& o = r.agents[i];
    ASSERT_EQ(o.agent_id, t.agent_id);
    ASSERT_LE(o.completed_turns, t.turns.size());
    ASSERT_EQ(o.turn_llm_times.size(), o.completed_turns);
    Tokens ctx = 0;
    Tokens dec = 0;
    for (std::size_t k = 0; k < o.completed_turns; ++k) {
      ctx += t.turns[k].prefill_tokens + t.turns[k].decode_tokens;
      dec += t.turns[k].decode_tokens;
    }
    EXPECT_EQ(o.context_tokens, ctx);
    EXPECT_EQ(o.total_decode_tokens, dec);
    EXPECT_NEAR(std::accumulate(o.turn_llm_times.begin(), o.turn_llm_times.end(), 0.0),
                o.total_llm_time, 1e-9 * std::max(1.0, o.total_llm_time));
    EXPECT_EQ(o.completion_time.has_value(), o.completed_turns == t.turns.size());
    if (o.completion_time) {
      EXPECT_GE(*o.completion_time, t.arrival_time + o.total_llm_time - 1e-9);
      EXPECT_LE(*o.completion_time, r.window);
    }
    for (double ti : o.turn_llm_times) EXPECT_GT(ti, 0.0);
    EXPECT_LT(o.instance, instances);
  }
}

INSTANTIATE_TEST_SUITE_P(
    Modes, WorkConservation,
    ::testing::Values(std::make_tuple(ControllerMode::context_aware, RoutingPolicy::context_aware, std::size_t{1}),
                      std::make_tuple(ControllerMode::context_aware, RoutingPolicy::context_aware, std::size_t{4}),
                      std::make_tuple(ControllerMode::off, RoutingPolicy::round_robin, std::size_t{4}),
                      std::make_tuple(ControllerMode::fixed, RoutingPolicy::least_loaded, std::size_t{2})));

TEST(RunSimulation, PowerSegmentsTileWindowAndStayInBounds) {
  SimConfig cfg;
  cfg.duration = 1800.0;
  cfg.instances = 2;
  const auto r = run_simulation(cfg, generate_workload(busy_spec(7)));
  for (const auto& segs : r.power) {
    ASSERT_FALSE(segs.empty());
    EXPECT_EQ(segs.front().start, 0.0);
    EXPECT_EQ(segs.back().end, r.window);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (i > 0) {
        EXPECT_EQ(segs[i].start, segs[i - 1].end);
      }
      EXPECT_GE(segs[i].watts, 50.0);
      EXPECT_LE(segs[i].watts, 400.0);
    }
  }
  for (const auto& u : r.usage) {
    for (std::size_t i = 1; i < u.size(); ++i) EXPECT_LT(u[i - 1].time, u[i].time);
  }
}

TEST(RunSimulation, PowerMatchesPrefixSumOracle) {
  SimConfig cfg;
  cfg.duration = 1800.0;
  cfg.instances = 3;
  const auto r = run_simulation(cfg, generate_workload(busy_spec(9)));
  // Oracle: merge all segment boundaries, then sum watts * dt via prefix sums.
  double energy = 0.0;
  for (const auto& segs : r.power) {
    std::vector<double> prefix{0.0};
    for (const auto& s : segs) prefix.push_back(prefix.back() + s.watts * (s.end - s.start));
    energy += prefix.back();
  }
  const double got = integrate_power(r.power, r.window);
  EXPECT_NEAR(got, energy / r.window, 1e-12 * got);
}

TEST(RunSimulation, EpochDecisionsAtEpochBoundaries) {
  SimConfig cfg;
  cfg.duration = 300.0;
  cfg.controller.epoch_length = 2.5;
  const auto r = run_simulation(cfg, generate_workload(busy_spec(2)));
  ASSERT_FALSE(r.decisions.empty());
  for (const auto& d : r.decisions) {
    const double k = d.time / 2.5;
    EXPECT_EQ(k, std::floor(k));
  }
  for (const auto& s : r.series) {
    const auto before = std::upper_bound(r.decisions.begin(), r.decisions.end(), s.time,
                                         [](double t, const auto& d) { return t < d.time; });
    if (before == r.decisions.begin()) continue;
    EXPECT_EQ(s.level, std::prev(before)->level);
  }
}

TEST(RunSimulation, BaselinesHoldTheirLevel) {
  SimConfig cfg;
  cfg.duration = 600.0;
  cfg.controller.mode = ControllerMode::fixed;
  cfg.controller.fixed_level_mhz = 810;
  const auto r = run_simulation(cfg, generate_workload(busy_spec(4)));
  for (const auto& s : r.series) EXPECT_EQ(s.mhz, 810.0);
  cfg.controller.mode = ControllerMode::off;
  const auto off = run_simulation(cfg, generate_workload(busy_spec(4)));
  for (const auto& s : off.series) EXPECT_EQ(s.mhz, 1680.0);
}

TEST(IntegratePower, ExactPiecewiseAverages) {
  const std::vector<std::vector<PowerSegment>> constant = {{{0, 10, 200}}};
  EXPECT_DOUBLE_EQ(integrate_power(constant, 10), 200.0);
  const std::vector<std::vector<PowerSegment>> halves = {{{0, 5, 100}, {5, 10, 300}}};
  EXPECT_DOUBLE_EQ(integrate_power(halves, 10), 200.0);
  const std::vector<std::vector<PowerSegment>> two = {{{0, 7, 50}}, {{0, 7, 150}}};
  EXPECT_DOUBLE_EQ(integrate_power(two, 7), 200.0);
  const std::vector<std::vector<PowerSegment>> gap = {{{0, 4, 100}, {5, 10, 300}}};
  EXPECT_THROW(integrate_power(gap, 10), std::runtime_error);
  const std::vector<std::vector<PowerSegment>> short_cover = {{{0, 4, 100}}};
  EXPECT_THROW(integrate_power(short_cover, 10), std::runtime_error);
}

TEST(Event, TieOrder) {
  const Event epoch{1.0, EventKind::epoch_tick, 9};
  const Event done{1.0, EventKind::turn_complete, 1};
  const Event arrival{1.0, EventKind::agent_arrival, 0};
  const Event earlier{0.5, EventKind::sample_tick, 100};
  EXPECT_TRUE(done > epoch);
  EXPECT_TRUE(arrival > done);
  EXPECT_TRUE(epoch > earlier);
  const Event a{1.0, EventKind::turn_issue, 3};
  const Event b{1.0, EventKind::turn_issue, 4};
  EXPECT_TRUE(b > a);
}

}  // namespace
}  // namespace agentsim
