#pragma once

// Agent traces, the synthetic workload generator, and the JSON-lines trace
// file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "agentsim/errors.hpp"

namespace agentsim {

using Tokens = std::int64_t;

struct TurnRecord {
  Tokens prefill_tokens = 1;
  Tokens decode_tokens = 1;
  double tool_time = 0.0;  // seconds spent in the tool after this turn

  friend bool operator==(const TurnRecord&, const TurnRecord&) = default;
};

struct AgentTrace {
  std::string agent_id;
  double arrival_time = 0.0;
  std::vector<TurnRecord> turns;

  // Context size right after step `step` (1-based) is issued: all prior
  // prefill and decode tokens plus this step's prefill.
  Tokens context_at_step(std::size_t step) const {
    Tokens c = 0;
    for (std::size_t i = 0; i + 1 < step && i < turns.size(); ++i) {
      c += turns[i].prefill_tokens + turns[i].decode_tokens;
    }
    if (step >= 1 && step <= turns.size()) c += turns[step - 1].prefill_tokens;
    return c;
  }

  Tokens total_tokens() const {
    Tokens c = 0;
    for (const auto& t : turns) c += t.prefill_tokens + t.decode_tokens;
    return c;
  }

  friend bool operator==(const AgentTrace&, const AgentTrace&) = default;
};

enum class DistKind { constant, exponential, lognormal, uniform };

inline std::string_view to_string(DistKind k) {
  switch (k) {
    case DistKind::constant: return "constant";
    case DistKind::exponential: return "exponential";
    case DistKind::lognormal: return "lognormal";
    case DistKind::uniform: return "uniform";
  }
  return "?";
}

inline DistKind parse_dist_kind(std::string_view s, const std::string& field) {
  if (s == "constant") return DistKind::constant;
  if (s == "exponential") return DistKind::exponential;
  if (s == "lognormal") return DistKind::lognormal;
  if (s == "uniform") return DistKind::uniform;
  throw ConfigError(field, "unknown distribution '" + std::string(s) + "'");
}

// A one-dimensional sampling distribution with a hard clamp to [min, max].
// Log-normal is parameterized by its (unclamped) mean and shape sigma.
// Uniform draws from [min, max].
struct Distribution {
  DistKind kind = DistKind::constant;
  double mean = 1.0;
  double sigma = 0.0;
  double min = 0.0;
  double max = std::numeric_limits<double>::infinity();

  void validate(const std::string& field) const {
    if (!(min <= max)) throw ConfigError(field, "min must not exceed max");
    switch (kind) {
      case DistKind::constant:
        if (!std::isfinite(mean)) throw ConfigError(field, "mean must be finite");
        break;
      case DistKind::exponential:
        if (!(mean > 0) || !std::isfinite(mean))
          throw ConfigError(field, "exponential mean must be > 0");
        break;
      case DistKind::lognormal:
        if (!(mean > 0) || !std::isfinite(mean))
          throw ConfigError(field, "lognormal mean must be > 0");
        if (!(sigma >= 0) || !std::isfinite(sigma))
          throw ConfigError(field, "lognormal sigma must be >= 0");
        break;
      case DistKind::uniform:
        if (!std::isfinite(min) || !std::isfinite(max))
          throw ConfigError(field, "uniform bounds must be finite");
        break;
    }
  }

  // Location parameter of the underlying normal.
  double log_mu() const { return std::log(mean) - 0.5 * sigma * sigma; }

  template <class Rng>
  double sample(Rng& rng) const {
    double x = 0.0;
    switch (kind) {
      case DistKind::constant:
        x = mean;
        break;
      case DistKind::exponential:
        x = std::exponential_distribution<double>(1.0 / mean)(rng);
        break;
      case DistKind::lognormal:
        x = sigma == 0.0 ? mean
                         : std::lognormal_distribution<double>(log_mu(), sigma)(rng);
        break;
      case DistKind::uniform:
        x = std::uniform_real_distribution<double>(min, max)(rng);
        break;
    }
    return std::clamp(x, min, max);
  }

  // Integer draw, rounded to nearest, never below max(1, min).
  template <class Rng>
  Tokens sample_count(Rng& rng) const {
    const double lo = std::max(1.0, std::ceil(min));
    const double hi = std::max(lo, std::floor(max));
    return static_cast<Tokens>(std::clamp(std::round(sample(rng)), lo, hi));
  }

  static Distribution constant_of(double v) {
    return {DistKind::constant, v, 0.0, 0.0, std::numeric_limits<double>::infinity()};
  }
  static Distribution exponential_of(double mean) {
    return {DistKind::exponential, mean, 0.0, 0.0, std::numeric_limits<double>::infinity()};
  }
  static Distribution lognormal_of(double mean, double sigma, double min = 0.0,
                                   double max = std::numeric_limits<double>::infinity()) {
    return {DistKind::lognormal, mean, sigma, min, max};
  }
};

enum class ArrivalProcess { poisson, fixed_interval, replay };

inline std::string_view to_string(ArrivalProcess p) {
  switch (p) {
    case ArrivalProcess::poisson: return "poisson";
    case ArrivalProcess::fixed_interval: return "fixed_interval";
    case ArrivalProcess::replay: return "replay";
  }
  return "?";
}

inline ArrivalProcess parse_arrival_process(std::string_view s) {
  if (s == "poisson") return ArrivalProcess::poisson;
  if (s == "fixed_interval" || s == "fixed-interval") return ArrivalProcess::fixed_interval;
  if (s == "replay") return ArrivalProcess::replay;
  throw ConfigError("workload.arrival_process", "unknown process '" + std::string(s) + "'");
}

struct WorkloadSpec {
  double arrival_rate = 0.08;  // agents per second
  ArrivalProcess arrival_process = ArrivalProcess::poisson;
  // Heavy-tailed turn counts: mean 37, P99 about 6x the median, clamped to
  // [1, 2518].
  Distribution turn_count = Distribution::lognormal_of(37.0, 0.8, 1.0, 2518.0);
  Distribution prefill_tokens = Distribution::lognormal_of(400.0, 0.8, 1.0, 16000.0);
  Distribution decode_tokens = Distribution::lognormal_of(100.0, 0.6, 1.0, 1000.0);
  Distribution tool_time = Distribution::exponential_of(2.0);
  // Extra prefill tokens on the first turn (system prompt and task).
  Distribution initial_prompt = Distribution::constant_of(0.0);
  // Extra prefill tokens per turn index (tool observations grow over time).
  double observation_growth = 0.0;
  double duration = 10800.0;
  std::uint64_t seed = 1;
  std::string replay_path;  // used when arrival_process == replay

  void validate() const {
    if (arrival_process != ArrivalProcess::replay &&
        (!(arrival_rate > 0) || !std::isfinite(arrival_rate)))
      throw ConfigError("workload.arrival_rate", "must be > 0");
    if (!(duration > 0) || !std::isfinite(duration))
      throw ConfigError("workload.duration", "must be > 0");
    turn_count.validate("workload.turns");
    if (turn_count.max < 1) throw ConfigError("workload.turns", "max must be >= 1");
    prefill_tokens.validate("workload.prefill");
    decode_tokens.validate("workload.decode");
    tool_time.validate("workload.tool_time");
    if (tool_time.min < 0) throw ConfigError("workload.tool_time", "min must be >= 0");
    initial_prompt.validate("workload.initial_prompt");
    if (initial_prompt.min < 0) throw ConfigError("workload.initial_prompt", "min must be >= 0");
    if (!(observation_growth >= 0))
      throw ConfigError("workload.observation_growth", "must be >= 0");
    if (arrival_process == ArrivalProcess::replay && replay_path.empty())
      throw ConfigError("workload.trace", "replay requires a trace path");
  }
};

inline std::string make_agent_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "agent-" + digits;
}

std::vector<AgentTrace> load_trace(const std::string& path);

// Agents sorted by arrival time. Pure function of `spec`.
inline std::vector<AgentTrace> generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  std::vector<AgentTrace> agents;
  if (spec.arrival_process == ArrivalProcess::replay) {
    for (auto& a : load_trace(spec.replay_path)) {
      if (a.arrival_time < spec.duration) agents.push_back(std::move(a));
    }
    std::stable_sort(agents.begin(), agents.end(), [](const auto& x, const auto& y) {
      return x.arrival_time < y.arrival_time;
    });
    return agents;
  }

  // Independent streams for arrival times and agent bodies.
  std::seed_seq arrival_seed{spec.seed, std::uint64_t{0x61727269}};
  std::seed_seq body_seed{spec.seed, std::uint64_t{0x626f6479}};
  std::mt19937_64 arrival_rng(arrival_seed);
  std::mt19937_64 body_rng(body_seed);

  std::vector<double> arrivals;
  if (spec.arrival_process == ArrivalProcess::poisson) {
    std::exponential_distribution<double> gap(spec.arrival_rate);
    for (double t = gap(arrival_rng); t < spec.duration; t += gap(arrival_rng)) {
      arrivals.push_back(t);
    }
  } else {
    for (std::size_t k = 0;; ++k) {
      const double t = static_cast<double>(k) / spec.arrival_rate;
      if (t >= spec.duration) break;
      arrivals.push_back(t);
    }
  }

  agents.reserve(arrivals.size());
  for (std::size_t i = 0; i < arrivals.size(); ++i) {
    AgentTrace a;
    a.agent_id = make_agent_id(i);
    a.arrival_time = arrivals[i];
    const auto n = static_cast<std::size_t>(spec.turn_count.sample_count(body_rng));
    a.turns.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      TurnRecord t;
      t.prefill_tokens = spec.prefill_tokens.sample_count(body_rng) +
                         static_cast<Tokens>(std::llround(spec.observation_growth * k));
      if (k == 0)
        t.prefill_tokens += static_cast<Tokens>(std::llround(spec.initial_prompt.sample(body_rng)));
      t.decode_tokens = spec.decode_tokens.sample_count(body_rng);
      t.tool_time = std::max(0.0, spec.tool_time.sample(body_rng));
      a.turns.push_back(t);
    }
    agents.push_back(std::move(a));
  }
  return agents;
}

namespace detail {

inline void validate_agent(const AgentTrace& a, const std::string& where) {
  if (a.agent_id.empty()) throw ValidationError(where + ": empty agent_id");
  if (!(a.arrival_time >= 0) || !std::isfinite(a.arrival_time))
    throw ValidationError(where + ": arrival_time must be >= 0");
  if (a.turns.empty()) throw ValidationError(where + ": agent has no turns");
  for (const auto& t : a.turns) {
    if (t.prefill_tokens < 1 || t.decode_tokens < 1)
      throw ValidationError(where + ": token counts must be >= 1");
    if (!(t.tool_time >= 0) || !std::isfinite(t.tool_time))
      throw ValidationError(where + ": tool_time must be >= 0");
  }
}

inline AgentTrace parse_trace_line(const std::string& line, std::size_t lineno) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(lineno, e.what());
  }
  if (!j.is_object()) throw ParseError(lineno, "record is not an object");
  AgentTrace a;
  const auto id = j.find("agent_id");
  if (id == j.end() || !id->is_string()) throw ParseError(lineno, "agent_id must be a string");
  a.agent_id = id->get<std::string>();
  const auto at = j.find("arrival_time");
  if (at == j.end() || !at->is_number()) throw ParseError(lineno, "arrival_time must be a number");
  a.arrival_time = at->get<double>();
  const auto turns = j.find("turns");
  if (turns == j.end() || !turns->is_array()) throw ParseError(lineno, "turns must be an array");
  a.turns.reserve(turns->size());
  for (const auto& t : *turns) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() ||
        !t[1].is_number_integer() || !t[2].is_number()) {
      throw ParseError(lineno, "turn must be [prefill_tokens, decode_tokens, tool_time]");
    }
    a.turns.push_back({t[0].get<Tokens>(), t[1].get<Tokens>(), t[2].get<double>()});
  }
  return a;
}

}  // namespace detail

inline std::string format_trace_line(const AgentTrace& a) {
  nlohmann::ordered_json turns = nlohmann::ordered_json::array();
  for (const auto& t : a.turns) {
    turns.push_back(nlohmann::ordered_json::array({t.prefill_tokens, t.decode_tokens, t.tool_time}));
  }
  nlohmann::ordered_json j;
  j["agent_id"] = a.agent_id;
  j["arrival_time"] = a.arrival_time;
  j["turns"] = std::move(turns);
  return j.dump();
}

inline std::vector<AgentTrace> parse_trace(std::istream& in) {
  std::vector<AgentTrace> agents;
  std::unordered_set<std::string> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    AgentTrace a = detail::parse_trace_line(line, lineno);
    detail::validate_agent(a, "line " + std::to_string(lineno));
    if (!seen.insert(a.agent_id).second) {
      throw ValidationError("line " + std::to_string(lineno) + ": duplicate agent_id '" +
                            a.agent_id + "'");
    }
    agents.push_back(std::move(a));
  }
  return agents;
}

inline std::vector<AgentTrace> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace '" + path + "'");
  return parse_trace(in);
}

inline void write_trace(std::ostream& out, const std::vector<AgentTrace>& agents) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    detail::validate_agent(agents[i], "agent " + std::to_string(i));
    if (!seen.insert(agents[i].agent_id).second)
      throw ValidationError("duplicate agent_id '" + agents[i].agent_id + "'");
    out << format_trace_line(agents[i]) << '\n';
  }
}

inline void save_trace(const std::vector<AgentTrace>& agents, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write trace '" + path + "'");
  write_trace(out, agents);
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace agentsim
