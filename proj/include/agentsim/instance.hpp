#pragma once

// Single serving instance: DVFS operating points, frequency-dependent service
// time, context-cache accounting against a token capacity, and power draw.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "agentsim/errors.hpp"
#include "agentsim/workload.hpp"

namespace agentsim {

using AgentIndex = std::uint32_t;
using InstanceId = std::uint32_t;  // 0-based position in the instance list

// 1-based DVFS level index; 1 is the lowest frequency, L the highest.
struct Level {
  int value = 1;

  constexpr auto operator<=>(const Level&) const = default;
};

struct FrequencyLevel {
  double nominal_mhz = 0.0;
  double prefill_rate = 0.0;  // tokens/s for one request
  double decode_rate = 0.0;   // tokens/s for one request
  double active_power = 0.0;  // W while any request executes
  double idle_power = 0.0;    // W otherwise
};

class FrequencyTable {
 public:
  FrequencyTable() = default;
  explicit FrequencyTable(std::vector<FrequencyLevel> levels) : levels_(std::move(levels)) {}

  int size() const { return static_cast<int>(levels_.size()); }
  Level top() const { return Level{size()}; }
  const FrequencyLevel& operator[](Level l) const { return levels_.at(l.value - 1); }
  const std::vector<FrequencyLevel>& levels() const { return levels_; }

  double max_active_power() const {
    double p = 0.0;
    for (const auto& l : levels_) p = std::max(p, l.active_power);
    return p;
  }

  // Highest level whose nominal frequency does not exceed `mhz`
  // (the lowest level if all exceed it).
  Level level_at_or_below(double mhz) const {
    Level best{1};
    for (int i = 0; i < size(); ++i) {
      if (levels_[i].nominal_mhz <= mhz) best = Level{i + 1};
    }
    return best;
  }

  void validate(double min_activation_jump = 100.0) const {
    if (levels_.size() < 2) throw ConfigError("frequency.levels", "need at least 2 levels");
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const auto& l = levels_[i];
      const std::string at = "frequency.levels[" + std::to_string(i + 1) + "]";
      if (!(l.prefill_rate > 0) || !(l.decode_rate > 0))
        throw ConfigError(at, "token rates must be > 0");
      if (!(l.idle_power >= 0)) throw ConfigError(at, "idle_power must be >= 0");
      if (l.active_power < l.idle_power + min_activation_jump)
        throw ConfigError(at, "active_power must exceed idle_power by the activation jump");
      if (i == 0) continue;
      const auto& p = levels_[i - 1];
      if (!(l.nominal_mhz > p.nominal_mhz))
        throw ConfigError(at, "levels must be strictly ordered by frequency");
      if (l.prefill_rate < p.prefill_rate || l.decode_rate < p.decode_rate)
        throw ConfigError(at, "token rates must be non-decreasing across levels");
      if (l.active_power < p.active_power)
        throw ConfigError(at, "active_power must be non-decreasing across levels");
    }
  }

 private:
  std::vector<FrequencyLevel> levels_;
};

struct FrequencyTableModel {
  std::vector<double> mhz = {660, 810, 900, 1185, 1350, 1515, 1680};
  double top_prefill_rate = 4000.0;  // tokens/s at the highest level
  double top_decode_rate = 75.0;     // tokens/s per request at the highest level
  double rate_exponent = 0.7;        // rate ~ (mhz / top_mhz)^exponent
  double min_active_power = 150.0;
  double max_active_power = 400.0;
  double idle_power = 50.0;
};

// Rates scale sublinearly with frequency; active power is linear in MHz
// between the bottom and top levels.
inline FrequencyTable make_frequency_table(const FrequencyTableModel& m) {
  if (m.mhz.size() < 2) throw ConfigError("frequency.mhz", "need at least 2 levels");
  const double lo = m.mhz.front();
  const double hi = m.mhz.back();
  std::vector<FrequencyLevel> levels;
  for (double f : m.mhz) {
    const double scale = std::pow(f / hi, m.rate_exponent);
    const double frac = hi > lo ? (f - lo) / (hi - lo) : 1.0;
    levels.push_back({f, m.top_prefill_rate * scale, m.top_decode_rate * scale,
                      m.min_active_power + frac * (m.max_active_power - m.min_active_power),
                      m.idle_power});
  }
  return FrequencyTable(std::move(levels));
}

inline FrequencyTable default_frequency_table() { return make_frequency_table({}); }

enum class ThrashMode { recompute, offload };

inline std::string_view to_string(ThrashMode m) {
  return m == ThrashMode::recompute ? "recompute" : "offload";
}

inline ThrashMode parse_thrash_mode(std::string_view s) {
  if (s == "recompute") return ThrashMode::recompute;
  if (s == "offload") return ThrashMode::offload;
  throw ConfigError("instance.thrash_mode", "expected recompute|offload");
}

// Per-request slowdown with n requests running: none up to `knee`
// requests, then n / knee (aggregate token rate saturates). knee == 0
// disables interference.
struct BatchInterference {
  double knee = 0.0;

  bool enabled() const { return knee > 0; }

  double slowdown(std::size_t running) const {
    const auto n = static_cast<double>(running);
    return enabled() && n > knee ? n / knee : 1.0;
  }
};

struct InstanceConfig {
  Tokens capacity_tokens = 500'000;
  FrequencyTable frequency_table = default_frequency_table();
  ThrashMode thrash_mode = ThrashMode::recompute;
  double thrash_latency_factor = 3.0;
  BatchInterference batch_interference{8.0};
  // Requests executing at once; further issued requests wait in FIFO order.
  // 0 means unlimited.
  std::size_t max_batch = 64;

  void validate() const {
    if (capacity_tokens <= 0) throw ConfigError("instance.capacity_tokens", "must be > 0");
    if (!(thrash_latency_factor >= 1.0))
      throw ConfigError("instance.thrash_latency_factor", "must be >= 1");
    if (!(batch_interference.knee >= 0))
      throw ConfigError("instance.batch_knee", "must be >= 0");
    frequency_table.validate();
  }
};

// LLM time for one turn executed entirely under the given conditions.
inline double service_time(const TurnRecord& turn, const FrequencyLevel& level,
                           [[maybe_unused]] Tokens context_tokens, std::size_t concurrent,
                           bool thrashing, const InstanceConfig& config) {
  if (!(level.prefill_rate > 0) || !(level.decode_rate > 0))
    throw ConfigError("frequency.levels", "token rates must be > 0");
  const double base = static_cast<double>(turn.prefill_tokens) / level.prefill_rate +
                      static_cast<double>(turn.decode_tokens) / level.decode_rate;
  return base * config.batch_interference.slowdown(concurrent) *
         (thrashing ? config.thrash_latency_factor : 1.0);
}

struct AgentRuntimeState {
  AgentIndex agent = 0;
  Tokens context_tokens = 0;
  std::uint32_t completed_steps = 0;
  Tokens decode_tokens_total = 0;
  double llm_time_total = 0.0;
  std::uint32_t steps_since_assignment = 0;
  InstanceId instance = 0;
};

// Applies one completed turn: context grows by its prefill and decode tokens.
inline AgentRuntimeState grow_context(AgentRuntimeState agent, const TurnRecord& turn,
                                      double llm_time = 0.0) {
  agent.context_tokens += turn.prefill_tokens + turn.decode_tokens;
  agent.completed_steps += 1;
  agent.decode_tokens_total += turn.decode_tokens;
  agent.llm_time_total += llm_time;
  return agent;
}

struct PendingEntry {
  AgentIndex agent = 0;
  Tokens resumed_context = 0;
};

// Context accounting of one instance. `context_usage()` is kept equal to the
// sum of the ongoing agents' context; thrashing is usage > capacity.
class InstanceState {
 public:
  InstanceState(InstanceId id, Tokens capacity, Level level)
      : id_(id), capacity_(capacity), level_(level) {}

  InstanceId id() const { return id_; }
  Tokens capacity() const { return capacity_; }
  Level level() const { return level_; }
  void set_level(Level l) { level_ = l; }

  Tokens context_usage() const { return usage_; }
  bool thrashing() const { return usage_ > capacity_; }
  bool busy() const { return running_ > 0; }
  std::size_t running() const { return running_; }
  void set_running(std::size_t n) { running_ = n; }

  const std::map<AgentIndex, Tokens>& ongoing() const { return ongoing_; }
  const std::deque<PendingEntry>& pending() const { return pending_; }
  bool is_ongoing(AgentIndex a) const { return ongoing_.contains(a); }
  bool is_pending(AgentIndex a) const {
    return std::any_of(pending_.begin(), pending_.end(),
                       [a](const PendingEntry& e) { return e.agent == a; });
  }

  void enqueue_pending(AgentIndex a, Tokens resumed_context) {
    if (is_ongoing(a) || is_pending(a))
      throw SimLogicError("agent " + std::to_string(a) + " already placed on instance");
    pending_.push_back({a, resumed_context});
  }

  bool remove_pending(AgentIndex a) {
    const auto it = std::find_if(pending_.begin(), pending_.end(),
                                 [a](const PendingEntry& e) { return e.agent == a; });
    if (it == pending_.end()) return false;
    pending_.erase(it);
    return true;
  }

  // Moves `a` into the ongoing set (from pending if queued there).
  void admit(AgentIndex a, Tokens resumed_context) {
    if (is_ongoing(a)) throw SimLogicError("agent " + std::to_string(a) + " already ongoing");
    remove_pending(a);
    ongoing_.emplace(a, resumed_context);
    usage_ += resumed_context;
  }

  void grow(AgentIndex a, Tokens delta) {
    const auto it = ongoing_.find(a);
    if (it == ongoing_.end()) throw SimLogicError("grow: agent " + std::to_string(a) + " not ongoing");
    it->second += delta;
    usage_ += delta;
  }

  // Releases the agent's whole context; returns the released token count.
  Tokens complete_agent(AgentIndex a) {
    const auto it = ongoing_.find(a);
    if (it == ongoing_.end())
      throw SimLogicError("complete: agent " + std::to_string(a) + " not ongoing");
    const Tokens released = it->second;
    usage_ -= released;
    ongoing_.erase(it);
    return released;
  }

 private:
  InstanceId id_;
  Tokens capacity_;
  Level level_;
  Tokens usage_ = 0;
  std::size_t running_ = 0;
  std::map<AgentIndex, Tokens> ongoing_;
  std::deque<PendingEntry> pending_;
};

inline double power_draw(const InstanceState& state, const FrequencyTable& table) {
  const auto& l = table[state.level()];
  return state.busy() ? l.active_power : l.idle_power;
}

}  // namespace agentsim
