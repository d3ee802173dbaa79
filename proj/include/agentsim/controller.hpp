#pragma once

// Per-instance control loop: context-aware frequency selection, SLO boosting
// and two-threshold admission.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentsim/errors.hpp"
#include "agentsim/instance.hpp"

namespace agentsim {

enum class ControllerMode {
  off,            // top level, admit everything
  fixed,          // pinned level, admit everything
  context_aware,  // full controller
};

inline std::string_view to_string(ControllerMode m) {
  switch (m) {
    case ControllerMode::off: return "off";
    case ControllerMode::fixed: return "fixed";
    case ControllerMode::context_aware: return "context-aware";
  }
  return "?";
}

inline ControllerMode parse_controller_mode(std::string_view s) {
  if (s == "off") return ControllerMode::off;
  if (s == "fixed") return ControllerMode::fixed;
  if (s == "context-aware" || s == "context_aware") return ControllerMode::context_aware;
  throw ConfigError("controller.mode", "expected off|fixed|context-aware");
}

struct ControllerConfig {
  ControllerMode mode = ControllerMode::context_aware;
  double alpha = 0.75;
  double beta = 0.95;
  double gamma = 0.90;
  double slo_target = 20.0;  // tokens/s per agent
  double epoch_length = 1.0;
  double fixed_level_mhz = 810.0;  // used by ControllerMode::fixed
  bool boost = true;
  bool thrash_avoidance = true;
  // Accepted for completeness; no decision depends on it.
  double power_budget = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(alpha > 0 && alpha <= 1)) throw ConfigError("controller.alpha", "must be in (0, 1]");
    if (!(beta > 0 && beta < 1)) throw ConfigError("controller.beta", "must be in (0, 1)");
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("controller.gamma", "must be in (0, 1)");
    if (!(gamma < beta)) throw ConfigError("controller.gamma", "gamma < beta must hold");
    if (!(slo_target > 0)) throw ConfigError("controller.slo", "must be > 0");
    if (!(epoch_length > 0)) throw ConfigError("controller.epoch", "must be > 0");
  }

  bool admits_unbounded() const {
    return mode != ControllerMode::context_aware || !thrash_avoidance;
  }
};

struct ControllerDecision {
  Level frequency_level{1};
  std::vector<AgentIndex> admitted;
  bool deferred = false;
  bool boosted = false;
  std::optional<double> min_throughput;  // over agents with data
};

// Level f_k: top when usage >= alpha * capacity, otherwise the safe region
// [0, alpha * capacity) is split linearly into L - 1 bands.
inline Level select_frequency_level(Tokens usage, Tokens capacity, int num_levels,
                                    double alpha) {
  const double threshold = alpha * static_cast<double>(capacity);
  if (static_cast<double>(usage) >= threshold) return Level{num_levels};
  // Numerator and denominator are exact in double, so an exact integer
  // quotient is never rounded below itself.
  const double band = std::floor(static_cast<double>(usage) * (num_levels - 1) / threshold);
  const int level = static_cast<int>(band) + 1;
  return Level{std::clamp(level, 1, num_levels)};
}

// Running throughput (decode tokens over LLM time); empty before the first
// completed step.
inline std::optional<double> running_throughput(const AgentRuntimeState& agent) {
  if (!(agent.llm_time_total > 0)) return std::nullopt;
  return static_cast<double>(agent.decode_tokens_total) / agent.llm_time_total;
}

inline std::optional<double> min_running_throughput(
    std::span<const AgentRuntimeState> agents) {
  std::optional<double> m;
  for (const auto& a : agents) {
    if (const auto t = running_throughput(a); t && (!m || *t < *m)) m = t;
  }
  return m;
}

inline bool slo_boost_check(std::span<const AgentRuntimeState> agents, double tau) {
  const auto m = min_running_throughput(agents);
  return m && *m < tau;
}

struct AdmissionResult {
  std::vector<AgentIndex> admitted;
  bool deferred = false;
  Tokens usage_after = 0;
};

// Admits pending agents in queue order while usage < gamma * capacity;
// deferred when usage ends above beta * capacity.
inline AdmissionResult admission_pass(const InstanceState& state, double beta, double gamma,
                                      Tokens capacity) {
  AdmissionResult r;
  r.usage_after = state.context_usage();
  const double resume = gamma * static_cast<double>(capacity);
  for (const auto& entry : state.pending()) {
    if (!(static_cast<double>(r.usage_after) < resume)) break;
    r.admitted.push_back(entry.agent);
    r.usage_after += entry.resumed_context;
  }
  r.deferred = static_cast<double>(r.usage_after) > beta * static_cast<double>(capacity);
  return r;
}

// One epoch of the control loop over a snapshot of the instance. `agents`
// holds the runtime view of every ongoing and pending agent on the instance.
inline ControllerDecision control_epoch(const InstanceState& state,
                                        std::span<const AgentRuntimeState> agents,
                                        const ControllerConfig& config,
                                        const FrequencyTable& table) {
  ControllerDecision d;
  const int num_levels = table.size();
  d.min_throughput = min_running_throughput(agents);

  switch (config.mode) {
    case ControllerMode::off:
      d.frequency_level = table.top();
      break;
    case ControllerMode::fixed:
      d.frequency_level = table.level_at_or_below(config.fixed_level_mhz);
      break;
    case ControllerMode::context_aware:
      d.frequency_level = select_frequency_level(state.context_usage(), state.capacity(),
                                                 num_levels, config.alpha);
      if (config.boost && d.min_throughput && *d.min_throughput < config.slo_target) {
        d.frequency_level = table.top();
        d.boosted = true;
      }
      break;
  }

  if (config.admits_unbounded()) {
    for (const auto& e : state.pending()) d.admitted.push_back(e.agent);
  } else {
    auto r = admission_pass(state, config.beta, config.gamma, state.capacity());
    d.admitted = std::move(r.admitted);
    d.deferred = r.deferred;
  }
  return d;
}

}  // namespace agentsim
