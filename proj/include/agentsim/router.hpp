#pragma once

// Multi-instance routing: consolidation-first assignment, periodic
// ratio-triggered reassignment, and the round-robin / least-loaded baselines.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "agentsim/errors.hpp"
#include "agentsim/instance.hpp"

namespace agentsim {

enum class RoutingPolicy { context_aware, round_robin, least_loaded };

inline std::string_view to_string(RoutingPolicy p) {
  switch (p) {
    case RoutingPolicy::context_aware: return "context-aware";
    case RoutingPolicy::round_robin: return "round-robin";
    case RoutingPolicy::least_loaded: return "least-loaded";
  }
  return "?";
}

inline RoutingPolicy parse_routing_policy(std::string_view s) {
  if (s == "context-aware" || s == "context_aware") return RoutingPolicy::context_aware;
  if (s == "round-robin" || s == "round_robin") return RoutingPolicy::round_robin;
  if (s == "least-loaded" || s == "least_loaded") return RoutingPolicy::least_loaded;
  throw ConfigError("router.policy", "expected context-aware|round-robin|least-loaded");
}

struct RouterConfig {
  double consolidation_threshold = 0.5;
  std::uint32_t reassign_interval = 8;  // turns
  double imbalance_ratio = 2.0;
  RoutingPolicy policy = RoutingPolicy::context_aware;
  // Reset the step counter only when a move happens (the prose reading)
  // instead of after every executed check.
  bool reset_only_on_reassign = false;
  double migration_delay = 0.0;  // seconds added before the moved agent's next turn

  void validate() const {
    if (!(consolidation_threshold > 0 && consolidation_threshold < 1))
      throw ConfigError("router.consolidation_threshold", "must be in (0, 1)");
    if (reassign_interval < 1) throw ConfigError("router.reassign_interval", "must be >= 1");
    if (!(imbalance_ratio > 1)) throw ConfigError("router.imbalance_ratio", "must be > 1");
    if (!(migration_delay >= 0)) throw ConfigError("router.migration_delay", "must be >= 0");
  }
};

// Lowest index with minimal usage.
inline InstanceId argmin_usage(std::span<const Tokens> usages) {
  if (usages.empty()) throw ConfigError("router.instances", "no instances registered");
  return static_cast<InstanceId>(std::min_element(usages.begin(), usages.end()) -
                                 usages.begin());
}

// Initial placement: the lowest-index instance below theta * capacity, or the
// least-used instance once every instance is above it.
inline InstanceId choose_instance(std::span<const Tokens> usages, Tokens capacity,
                                  const RouterConfig& config) {
  if (usages.empty()) throw ConfigError("router.instances", "no instances registered");
  const double light = config.consolidation_threshold * static_cast<double>(capacity);
  for (std::size_t i = 0; i < usages.size(); ++i) {
    if (static_cast<double>(usages[i]) < light) return static_cast<InstanceId>(i);
  }
  return argmin_usage(usages);
}

// Reassignment check run when an agent issues a request. Increments the
// agent's step counter and, once it reaches the interval, compares the
// current instance's usage against the least-used instance.
inline std::optional<InstanceId> reassign_target(std::uint32_t& steps_since_assignment,
                                                 InstanceId current,
                                                 std::span<const Tokens> usages,
                                                 const RouterConfig& config) {
  steps_since_assignment += 1;
  if (steps_since_assignment < config.reassign_interval) return std::nullopt;
  const InstanceId target = argmin_usage(usages);
  std::optional<InstanceId> move;
  if (target != current && static_cast<double>(usages[current]) >=
                               config.imbalance_ratio * static_cast<double>(usages[target])) {
    move = target;
  }
  if (move || !config.reset_only_on_reassign) steps_since_assignment = 0;
  return move;
}

inline std::optional<InstanceId> maybe_reassign(AgentRuntimeState& agent,
                                                std::span<const Tokens> usages,
                                                const RouterConfig& config) {
  auto target = reassign_target(agent.steps_since_assignment, agent.instance, usages, config);
  if (target) agent.instance = *target;
  return target;
}

// Placement map and per-agent counters for one run.
class RouterState {
 public:
  RouterState(std::size_t num_instances, RouterConfig config)
      : num_instances_(num_instances), config_(config) {
    if (num_instances_ == 0) throw ConfigError("sim.instances", "need at least one instance");
  }

  const RouterConfig& config() const { return config_; }
  std::size_t num_instances() const { return num_instances_; }

  // Places a newly arrived agent according to the configured policy.
  InstanceId assign_agent(AgentIndex agent, std::span<const Tokens> usages, Tokens capacity) {
    InstanceId target = 0;
    switch (config_.policy) {
      case RoutingPolicy::context_aware:
        target = choose_instance(usages, capacity, config_);
        break;
      case RoutingPolicy::round_robin:
        target = route_round_robin();
        break;
      case RoutingPolicy::least_loaded:
        target = argmin_usage(usages);
        break;
    }
    placement_[agent] = target;
    steps_[agent] = 0;
    return target;
  }

  // Cycles 0, 1, ..., N-1, 0, ... in call order.
  InstanceId route_round_robin() {
    const auto id = static_cast<InstanceId>(next_rr_ % num_instances_);
    ++next_rr_;
    return id;
  }

  std::optional<InstanceId> maybe_reassign(AgentIndex agent, std::span<const Tokens> usages) {
    const auto it = placement_.find(agent);
    if (it == placement_.end()) throw SimLogicError("reassign: unknown agent");
    auto target = reassign_target(steps_[agent], it->second, usages, config_);
    if (target) it->second = *target;
    return target;
  }

  std::optional<InstanceId> placement(AgentIndex agent) const {
    const auto it = placement_.find(agent);
    if (it == placement_.end()) return std::nullopt;
    return it->second;
  }

  std::uint32_t steps(AgentIndex agent) const {
    const auto it = steps_.find(agent);
    return it == steps_.end() ? 0 : it->second;
  }

  void forget(AgentIndex agent) {
    placement_.erase(agent);
    steps_.erase(agent);
  }

 private:
  std::size_t num_instances_;
  RouterConfig config_;
  std::size_t next_rr_ = 0;
  std::unordered_map<AgentIndex, InstanceId> placement_;
  std::unordered_map<AgentIndex, std::uint32_t> steps_;
};

// Moves an agent's context from one instance to another: it leaves `from`
// (releasing its tokens there) and queues on `to` carrying its full context.
inline void migrate_context(AgentRuntimeState& agent, InstanceState& from, InstanceState& to) {
  if (from.id() == to.id()) throw SimLogicError("migrate: source and destination are the same");
  if (from.is_ongoing(agent.agent)) {
    from.complete_agent(agent.agent);
  } else if (!from.remove_pending(agent.agent)) {
    throw SimLogicError("migrate: agent " + std::to_string(agent.agent) +
                        " is not placed on the source instance");
  }
  to.enqueue_pending(agent.agent, agent.context_tokens);
  agent.instance = to.id();
  agent.steps_since_assignment = 0;
}

}  // namespace agentsim
