#pragma once

// Deterministic discrete-event simulation of agents served by one or more
// instances under the per-instance controller and the global router.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "agentsim/controller.hpp"
#include "agentsim/errors.hpp"
#include "agentsim/instance.hpp"
#include "agentsim/router.hpp"
#include "agentsim/workload.hpp"

namespace agentsim {

struct SimConfig {
  std::size_t instances = 1;
  InstanceConfig instance;
  ControllerConfig controller;
  RouterConfig router;
  double duration = 10800.0;
  double record_interval = 1.0;

  void validate() const {
    if (instances < 1) throw ConfigError("instance.count", "must be >= 1");
    if (!(duration > 0) || !std::isfinite(duration))
      throw ConfigError("sim.duration", "must be > 0");
    if (!(record_interval > 0)) throw ConfigError("sim.record_interval", "must be > 0");
    instance.validate();
    controller.validate();
    router.validate();
  }
};

// Lower value runs first at equal timestamps.
enum class EventKind : std::uint8_t {
  epoch_tick = 0,
  turn_complete = 1,
  tool_done = 2,
  turn_issue = 3,
  agent_arrival = 4,
  sample_tick = 5,
};

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::epoch_tick;
  std::uint64_t seq = 0;
  AgentIndex agent = 0;
  std::uint64_t version = 0;  // turn_complete only; stale versions are dropped
  InstanceId instance = 0;    // turn_complete only

  // std::priority_queue is a max-heap, so "greater" means "runs later".
  friend bool operator>(const Event& a, const Event& b) {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return a.kind > b.kind;
    return a.seq > b.seq;
  }
};

// Constant power over [start, end).
struct PowerSegment {
  double start = 0.0;
  double end = 0.0;
  double watts = 0.0;
};

// Usage takes value `usage` from `time` until the next change.
struct UsageChange {
  double time = 0.0;
  Tokens usage = 0;
};

struct SeriesSample {
  double time = 0.0;
  InstanceId instance = 0;
  Tokens usage = 0;
  int level = 1;
  double mhz = 0.0;
  double power = 0.0;
  std::size_t pending = 0;  // admission queue
  std::size_t queued = 0;   // issued requests waiting for a batch slot
  std::size_t running = 0;
  std::size_t ongoing = 0;
  bool thrashing = false;
};

struct DecisionRecord {
  double time = 0.0;
  InstanceId instance = 0;
  int level = 1;
  bool boosted = false;
  bool deferred = false;
  std::size_t admitted = 0;
  Tokens usage = 0;
  std::optional<double> min_throughput;
};

struct AgentOutcome {
  std::string agent_id;
  double arrival_time = 0.0;
  std::optional<double> completion_time;
  std::size_t turn_count = 0;
  std::size_t completed_turns = 0;
  Tokens context_tokens = 0;
  Tokens max_context_tokens = 0;
  double total_llm_time = 0.0;
  Tokens total_decode_tokens = 0;
  InstanceId instance = 0;
  std::uint32_t migrations = 0;
  std::vector<double> turn_llm_times;  // t_i of each completed turn
  bool in_flight = false;  // request issued but not finished at window end
};

struct SimulationResult {
  double window = 0.0;
  std::size_t num_instances = 0;
  Tokens capacity = 0;
  int num_levels = 0;
  std::vector<AgentOutcome> agents;  // every agent that arrived, in arrival order
  std::vector<SeriesSample> series;
  std::vector<std::vector<PowerSegment>> power;
  std::vector<std::vector<UsageChange>> usage;
  std::vector<DecisionRecord> decisions;
  std::vector<std::size_t> final_pending;  // admission queue + batch queue per instance
};

// Average system power over [0, T]: sum over instances of the time-weighted
// segment power, divided by T. Segments must tile [0, T] per instance.
inline double integrate_power(std::span<const std::vector<PowerSegment>> per_instance,
                              double window) {
  if (!(window > 0)) throw std::invalid_argument("integrate_power: window must be > 0");
  double energy = 0.0;
  for (std::size_t m = 0; m < per_instance.size(); ++m) {
    const auto& segs = per_instance[m];
    double cursor = 0.0;
    for (const auto& s : segs) {
      if (s.start != cursor || s.end < s.start)
        throw std::runtime_error("integrate_power: gap in coverage of instance " +
                                 std::to_string(m) + " at t=" + std::to_string(cursor));
      energy += s.watts * (s.end - s.start);
      cursor = s.end;
    }
    if (cursor != window)
      throw std::runtime_error("integrate_power: instance " + std::to_string(m) +
                               " not covered up to the window end");
  }
  return energy / window;
}

class Simulator {
 public:
  Simulator(SimConfig config, std::span<const AgentTrace> traces)
      : cfg_(std::move(config)), traces_(traces), router_(cfg_.instances, cfg_.router) {
    cfg_.validate();
    const auto& table = cfg_.instance.frequency_table;
    Level initial = table.top();
    if (cfg_.controller.mode == ControllerMode::fixed)
      initial = table.level_at_or_below(cfg_.controller.fixed_level_mhz);
    for (std::size_t i = 0; i < cfg_.instances; ++i) {
      instances_.emplace_back(
          InstanceState(static_cast<InstanceId>(i), cfg_.instance.capacity_tokens, initial));
    }
    agents_.resize(traces_.size());
    for (std::size_t a = 0; a < traces_.size(); ++a) {
      agents_[a].rt.agent = static_cast<AgentIndex>(a);
      if (a > 0 && traces_[a].arrival_time < traces_[a - 1].arrival_time)
        throw ValidationError("workload must be sorted by arrival_time");
    }
  }

  SimulationResult run() {
    const double T = cfg_.duration;
    for (auto& inst : instances_) {
      inst.power_now = power_draw(inst.state, cfg_.instance.frequency_table);
      inst.power_points.push_back({0.0, 0.0, inst.power_now});
      inst.usage_points.push_back({0.0, 0});
      inst.level_in_force = inst.state.level();
    }
    for (std::size_t a = 0; a < traces_.size(); ++a) {
      if (traces_[a].arrival_time <= T)
        push({traces_[a].arrival_time, EventKind::agent_arrival, 0, static_cast<AgentIndex>(a)});
    }
    if (cfg_.controller.mode == ControllerMode::context_aware) push({0.0, EventKind::epoch_tick});
    push({0.0, EventKind::sample_tick});

    while (!queue_.empty() && queue_.top().time <= T) {
      const Event e = queue_.top();
      queue_.pop();
      now_ = e.time;
      switch (e.kind) {
        case EventKind::epoch_tick: on_epoch(); break;
        case EventKind::turn_complete: on_turn_complete(e); break;
        case EventKind::tool_done:
        case EventKind::turn_issue: on_issue(e.agent); break;
        case EventKind::agent_arrival: on_arrival(e.agent); break;
        case EventKind::sample_tick: on_sample(); break;
      }
    }
    now_ = T;
    return finish();
  }

 private:
  enum class Phase { not_arrived, pending, ready, queued, running, tool, done };

  struct Agent {
    AgentRuntimeState rt;
    Phase phase = Phase::not_arrived;
    std::size_t next_turn = 0;
    double issue_time = 0.0;
    double ready_time = 0.0;
    bool resume_issue = false;
    double finish_work = 0.0;  // instance work clock value at which the turn ends
    std::optional<double> completion_time;
    Tokens max_context = 0;
    std::uint32_t migrations = 0;
    std::vector<double> turn_times;
  };

  // Running requests share one work clock per instance: it advances at
  // 1 / (batch slowdown * thrash factor) per simulated second, and a request
  // needs `base service time at the current level` units of it. Only a level
  // change re-scales the outstanding work of each request.
  struct Instance {
    explicit Instance(InstanceState s) : state(std::move(s)) {}

    InstanceState state;
    std::set<std::pair<double, AgentIndex>> running;  // (finish_work, agent)
    std::deque<AgentIndex> batch_queue;
    double work_clock = 0.0;
    double clock_time = 0.0;
    double multiplier = 1.0;
    Level level_in_force{1};
    std::uint64_t completion_version = 0;
    double power_now = 0.0;
    std::vector<PowerSegment> power_points;  // last one open until finish()
    std::vector<UsageChange> usage_points;
  };

  void push(Event e) {
    e.seq = seq_++;
    queue_.push(e);
  }

  std::vector<Tokens> usages() const {
    std::vector<Tokens> u;
    u.reserve(instances_.size());
    for (const auto& inst : instances_) u.push_back(inst.state.context_usage());
    return u;
  }

  const TurnRecord& current_turn(const Agent& ag) const {
    return traces_[ag.rt.agent].turns[ag.next_turn];
  }

  // Service time at `level` with no interference and no thrashing.
  double base_time(const Agent& ag, Level level) const {
    static const InstanceConfig plain = [] {
      InstanceConfig c;
      c.thrash_latency_factor = 1.0;
      return c;
    }();
    return service_time(current_turn(ag), cfg_.instance.frequency_table[level],
                        ag.rt.context_tokens, 1, false, plain);
  }

  double current_multiplier(const Instance& inst) const {
    return cfg_.instance.batch_interference.slowdown(inst.running.size()) *
           (inst.state.thrashing() ? cfg_.instance.thrash_latency_factor : 1.0);
  }

  void advance_clock(Instance& inst) {
    inst.work_clock += (now_ - inst.clock_time) / inst.multiplier;
    inst.clock_time = now_;
  }

  // Brings the work clock up to date, applies level/multiplier changes to
  // running work, reschedules the next completion, and logs power and usage.
  void refresh(InstanceId id) {
    auto& inst = instances_[id];
    advance_clock(inst);
    if (inst.state.level() != inst.level_in_force) {
      std::set<std::pair<double, AgentIndex>> rescaled;
      for (const auto& [finish, a] : inst.running) {
        auto& ag = agents_[a];
        const double left = std::max(0.0, finish - inst.work_clock) /
                            base_time(ag, inst.level_in_force);
        ag.finish_work = inst.work_clock + left * base_time(ag, inst.state.level());
        rescaled.emplace(ag.finish_work, a);
      }
      inst.running.swap(rescaled);
      inst.level_in_force = inst.state.level();
    }
    inst.multiplier = current_multiplier(inst);
    ++inst.completion_version;
    if (!inst.running.empty()) {
      const double left = std::max(0.0, inst.running.begin()->first - inst.work_clock);
      push({now_ + left * inst.multiplier, EventKind::turn_complete, 0, 0,
            inst.completion_version, id});
    }

    inst.state.set_running(inst.running.size());
    const double p = power_draw(inst.state, cfg_.instance.frequency_table);
    if (p != inst.power_now) {
      auto& back = inst.power_points.back();
      if (back.start == now_) {
        back.watts = p;
      } else {
        back.end = now_;
        inst.power_points.push_back({now_, now_, p});
      }
      inst.power_now = p;
    }
    const Tokens u = inst.state.context_usage();
    if (u != inst.usage_points.back().usage) {
      if (inst.usage_points.back().time == now_) {
        inst.usage_points.back().usage = u;
      } else {
        inst.usage_points.push_back({now_, u});
      }
    }
  }

  void on_arrival(AgentIndex a) {
    auto& ag = agents_[a];
    const auto u = usages();
    const InstanceId id = router_.assign_agent(a, u, cfg_.instance.capacity_tokens);
    ag.rt.instance = id;
    ag.rt.steps_since_assignment = 0;
    ag.phase = Phase::pending;
    instances_[id].state.enqueue_pending(a, 0);
    if (cfg_.controller.admits_unbounded()) admit(id, a);
  }

  void admit(InstanceId id, AgentIndex a) {
    auto& ag = agents_[a];
    instances_[id].state.admit(a, ag.rt.context_tokens);
    ag.phase = Phase::ready;
    push({std::max(now_, ag.ready_time), EventKind::turn_issue, 0, a});
    refresh(id);
  }

  void on_issue(AgentIndex a) {
    auto& ag = agents_[a];
    if (ag.phase != Phase::ready && ag.phase != Phase::tool)
      throw SimLogicError("issue: agent " + std::to_string(a) + " is not ready");
    const InstanceId id = ag.rt.instance;

    if (cfg_.router.policy == RoutingPolicy::context_aware && instances_.size() > 1 &&
        !ag.resume_issue) {
      const auto u = usages();
      const auto target = router_.maybe_reassign(a, u);
      ag.rt.steps_since_assignment = router_.steps(a);
      if (target) {
        migrate_context(ag.rt, instances_[id].state, instances_[*target].state);
        ++ag.migrations;
        ag.ready_time = now_ + cfg_.router.migration_delay;
        ag.resume_issue = true;
        ag.phase = Phase::pending;
        refresh(id);
        if (cfg_.controller.admits_unbounded()) admit(*target, a);
        return;
      }
    }
    ag.resume_issue = false;
    ag.issue_time = now_;
    auto& inst = instances_[id];
    if (!inst.state.is_ongoing(a)) throw SimLogicError("issue: agent not ongoing");
    if (cfg_.instance.max_batch == 0 || inst.running.size() < cfg_.instance.max_batch) {
      start(id, a);
    } else {
      ag.phase = Phase::queued;
      inst.batch_queue.push_back(a);
    }
  }

  void start(InstanceId id, AgentIndex a) {
    auto& ag = agents_[a];
    auto& inst = instances_[id];
    advance_clock(inst);
    ag.phase = Phase::running;
    ag.finish_work = inst.work_clock + base_time(ag, inst.level_in_force);
    inst.running.emplace(ag.finish_work, a);
    refresh(id);
  }

  void on_turn_complete(const Event& e) {
    auto& inst = instances_[e.instance];
    if (e.version != inst.completion_version || inst.running.empty()) return;  // stale
    advance_clock(inst);
    const AgentIndex a = inst.running.begin()->second;
    inst.running.erase(inst.running.begin());
    auto& ag = agents_[a];

    const TurnRecord& turn = current_turn(ag);
    const double t_i = now_ - ag.issue_time;
    ag.rt = grow_context(ag.rt, turn, t_i);
    ag.turn_times.push_back(t_i);
    inst.state.grow(a, turn.prefill_tokens + turn.decode_tokens);
    ag.max_context = std::max(ag.max_context, ag.rt.context_tokens);
    ++ag.next_turn;

    if (ag.next_turn == traces_[a].turns.size()) {
      inst.state.complete_agent(a);
      ag.phase = Phase::done;
      ag.completion_time = now_;
      router_.forget(a);
    } else {
      ag.phase = Phase::tool;
      push({now_ + turn.tool_time, EventKind::tool_done, 0, a});
    }
    while (!inst.batch_queue.empty() &&
           (cfg_.instance.max_batch == 0 || inst.running.size() < cfg_.instance.max_batch)) {
      const AgentIndex next = inst.batch_queue.front();
      inst.batch_queue.pop_front();
      start(e.instance, next);
    }
    refresh(e.instance);
  }

  void on_epoch() {
    const auto& table = cfg_.instance.frequency_table;
    std::vector<AgentRuntimeState> view;
    for (auto& inst : instances_) {
      view.clear();
      for (const auto& [a, ctx] : inst.state.ongoing()) view.push_back(agents_[a].rt);
      for (const auto& e : inst.state.pending()) view.push_back(agents_[e.agent].rt);
      const ControllerDecision d = control_epoch(inst.state, view, cfg_.controller, table);
      inst.state.set_level(d.frequency_level);
      refresh(inst.state.id());
      for (AgentIndex a : d.admitted) admit(inst.state.id(), a);
      decisions_.push_back({now_, inst.state.id(), d.frequency_level.value, d.boosted,
                            d.deferred, d.admitted.size(), inst.state.context_usage(),
                            d.min_throughput});
    }
    ++epoch_count_;
    push({static_cast<double>(epoch_count_) * cfg_.controller.epoch_length,
          EventKind::epoch_tick});
  }

  void on_sample() {
    const auto& table = cfg_.instance.frequency_table;
    for (const auto& inst : instances_) {
      series_.push_back({now_, inst.state.id(), inst.state.context_usage(),
                         inst.state.level().value, table[inst.state.level()].nominal_mhz,
                         inst.power_now, inst.state.pending().size(), inst.batch_queue.size(),
                         inst.running.size(), inst.state.ongoing().size(),
                         inst.state.thrashing()});
    }
    ++sample_count_;
    push({static_cast<double>(sample_count_) * cfg_.record_interval, EventKind::sample_tick});
  }

  SimulationResult finish() {
    SimulationResult r;
    r.window = cfg_.duration;
    r.num_instances = instances_.size();
    r.capacity = cfg_.instance.capacity_tokens;
    r.num_levels = cfg_.instance.frequency_table.size();
    for (auto& inst : instances_) {
      inst.power_points.back().end = cfg_.duration;
      r.power.push_back(std::move(inst.power_points));
      r.usage.push_back(std::move(inst.usage_points));
      r.final_pending.push_back(inst.state.pending().size() + inst.batch_queue.size());
    }
    for (std::size_t a = 0; a < agents_.size(); ++a) {
      auto& ag = agents_[a];
      if (ag.phase == Phase::not_arrived) continue;
      AgentOutcome o;
      o.agent_id = traces_[a].agent_id;
      o.arrival_time = traces_[a].arrival_time;
      o.completion_time = ag.completion_time;
      o.turn_count = traces_[a].turns.size();
      o.completed_turns = ag.next_turn;
      o.context_tokens = ag.rt.context_tokens;
      o.max_context_tokens = ag.max_context;
      o.total_llm_time = ag.rt.llm_time_total;
      o.total_decode_tokens = ag.rt.decode_tokens_total;
      o.instance = ag.rt.instance;
      o.migrations = ag.migrations;
      o.turn_llm_times = std::move(ag.turn_times);
      o.in_flight = ag.phase == Phase::running || ag.phase == Phase::queued;
      r.agents.push_back(std::move(o));
    }
    r.series = std::move(series_);
    r.decisions = std::move(decisions_);
    return r;
  }

  SimConfig cfg_;
  std::span<const AgentTrace> traces_;
  RouterState router_;
  std::vector<Instance> instances_;
  std::vector<Agent> agents_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  std::uint64_t epoch_count_ = 0;
  std::uint64_t sample_count_ = 0;
  std::vector<SeriesSample> series_;
  std::vector<DecisionRecord> decisions_;
};

inline SimulationResult run_simulation(const SimConfig& config,
                                       std::span<const AgentTrace> agents) {
  return Simulator(config, agents).run();
}

}  // namespace agentsim
