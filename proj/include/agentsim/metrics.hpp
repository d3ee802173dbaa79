#pragma once

// Evaluation metrics over a finished run and the CSV report writer.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agentsim/engine.hpp"
#include "agentsim/errors.hpp"

namespace agentsim {

struct AgentMetrics {
  std::string agent_id;
  double throughput = 0.0;  // decode tokens / LLM time over the whole lifecycle
  bool completed = false;
  std::size_t turn_count = 0;
  Tokens max_context_tokens = 0;
  double total_llm_time = 0.0;
  Tokens total_decode_tokens = 0;
};

struct SystemMetrics {
  std::optional<double> slo_attainment;  // empty when no agent completed
  std::optional<double> p5_throughput;
  double job_throughput = 0.0;  // completed agents per second
  double average_power = 0.0;
  double energy = 0.0;          // joules over the window
  double thrash_fraction = 0.0;
  std::size_t arrived_agents = 0;
  std::size_t completed_agents = 0;
  std::optional<double> energy_per_completed_agent;
};

inline std::vector<AgentMetrics> agent_metrics(const SimulationResult& r) {
  std::vector<AgentMetrics> out;
  out.reserve(r.agents.size());
  for (const auto& a : r.agents) {
    AgentMetrics m;
    m.agent_id = a.agent_id;
    m.completed = a.completion_time.has_value() && *a.completion_time <= r.window;
    m.turn_count = a.turn_count;
    m.max_context_tokens = a.max_context_tokens;
    m.total_llm_time = a.total_llm_time;
    m.total_decode_tokens = a.total_decode_tokens;
    m.throughput = a.total_llm_time > 0
                       ? static_cast<double>(a.total_decode_tokens) / a.total_llm_time
                       : 0.0;
    out.push_back(std::move(m));
  }
  return out;
}

// Share of completed agents whose throughput meets tau. Agents that did not
// complete inside the window are excluded.
inline std::optional<double> slo_attainment(std::span<const AgentMetrics> agents, double tau) {
  std::size_t n = 0;
  std::size_t ok = 0;
  for (const auto& a : agents) {
    if (!a.completed) continue;
    ++n;
    if (a.throughput >= tau) ++ok;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(ok) / static_cast<double>(n);
}

// Nearest-rank percentile (rank ceil(p * n) of the ascending sort) over
// completed agents.
inline std::optional<double> percentile_throughput(std::span<const AgentMetrics> agents,
                                                   double p) {
  std::vector<double> v;
  for (const auto& a : agents) {
    if (a.completed) v.push_back(a.throughput);
  }
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

struct RegimeSegment {
  double start = 0.0;
  double end = 0.0;
  bool thrashing = false;
};

struct RegimeReport {
  std::vector<std::vector<RegimeSegment>> per_instance;
  double thrash_fraction = 0.0;  // thrashing instance-time / total instance-time
};

// Splits each instance's usage history into maximal thrashing
// (usage > capacity) and non-thrashing segments over [0, window].
inline RegimeReport regime_classify(std::span<const std::vector<UsageChange>> usage,
                                    Tokens capacity, double window) {
  RegimeReport rep;
  double thrash_time = 0.0;
  for (const auto& series : usage) {
    std::vector<RegimeSegment> segs;
    for (std::size_t i = 0; i < series.size(); ++i) {
      const double start = series[i].time;
      const double end = i + 1 < series.size() ? series[i + 1].time : window;
      if (!(end > start)) continue;
      const bool th = series[i].usage > capacity;
      if (!segs.empty() && segs.back().thrashing == th && segs.back().end == start) {
        segs.back().end = end;
      } else {
        segs.push_back({start, end, th});
      }
    }
    for (const auto& s : segs) {
      if (s.thrashing) thrash_time += s.end - s.start;
    }
    rep.per_instance.push_back(std::move(segs));
  }
  const double total = window * static_cast<double>(usage.size());
  rep.thrash_fraction = total > 0 ? thrash_time / total : 0.0;
  return rep;
}

inline SystemMetrics system_metrics(const SimulationResult& r, double tau) {
  const auto agents = agent_metrics(r);
  SystemMetrics s;
  s.slo_attainment = slo_attainment(agents, tau);
  s.p5_throughput = percentile_throughput(agents, 0.05);
  s.arrived_agents = agents.size();
  s.completed_agents = static_cast<std::size_t>(
      std::count_if(agents.begin(), agents.end(), [](const auto& a) { return a.completed; }));
  s.job_throughput = static_cast<double>(s.completed_agents) / r.window;
  s.average_power = integrate_power(r.power, r.window);
  s.energy = s.average_power * r.window;
  s.thrash_fraction = regime_classify(r.usage, r.capacity, r.window).thrash_fraction;
  if (s.completed_agents > 0)
    s.energy_per_completed_agent = s.energy / static_cast<double>(s.completed_agents);
  return s;
}

// Shortest decimal form that parses back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string("undefined");
}

inline const std::vector<std::string>& summary_fields() {
  static const std::vector<std::string> fields = {
      "slo_attainment", "p5_throughput",   "job_throughput",   "average_power",
      "energy",         "thrash_fraction", "arrived_agents",   "completed_agents",
      "energy_per_completed_agent"};
  return fields;
}

inline std::vector<std::string> summary_values(const SystemMetrics& s) {
  return {format_optional(s.slo_attainment),
          format_optional(s.p5_throughput),
          format_number(s.job_throughput),
          format_number(s.average_power),
          format_number(s.energy),
          format_number(s.thrash_fraction),
          std::to_string(s.arrived_agents),
          std::to_string(s.completed_agents),
          format_optional(s.energy_per_completed_agent)};
}

inline std::string join_csv(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line;
}

namespace detail {

inline std::ofstream open_report(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  return out;
}

}  // namespace detail

// Writes summary.csv, agents.csv, timeseries.csv, power.csv, usage.csv and
// decisions.csv into `dir`.
inline void export_report(const SimulationResult& r, double tau,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const SystemMetrics s = system_metrics(r, tau);
  {
    auto out = detail::open_report(dir / "summary.csv");
    out << join_csv(summary_fields()) << '\n' << join_csv(summary_values(s)) << '\n';
  }
  {
    auto out = detail::open_report(dir / "agents.csv");
    out << "agent_id,arrival_time,completion_time,completed,turn_count,completed_turns,"
           "max_context_tokens,total_llm_time,total_decode_tokens,throughput,instance,"
           "migrations\n";
    const auto metrics = agent_metrics(r);
    for (std::size_t i = 0; i < r.agents.size(); ++i) {
      const auto& a = r.agents[i];
      const auto& m = metrics[i];
      out << a.agent_id << ',' << format_number(a.arrival_time) << ','
          << (a.completion_time ? format_number(*a.completion_time) : std::string()) << ','
          << (m.completed ? 1 : 0) << ',' << a.turn_count << ',' << a.completed_turns << ','
          << a.max_context_tokens << ',' << format_number(a.total_llm_time) << ','
          << a.total_decode_tokens << ',' << format_number(m.throughput) << ',' << a.instance
          << ',' << a.migrations << '\n';
    }
  }
  {
    auto out = detail::open_report(dir / "timeseries.csv");
    out << "time,instance,usage,level,mhz,power,pending,queued,running,ongoing,thrashing\n";
    for (const auto& x : r.series) {
      out << format_number(x.time) << ',' << x.instance << ',' << x.usage << ',' << x.level
          << ',' << format_number(x.mhz) << ',' << format_number(x.power) << ',' << x.pending
          << ',' << x.queued << ',' << x.running << ',' << x.ongoing << ','
          << (x.thrashing ? 1 : 0) << '\n';
    }
  }
  {
    auto out = detail::open_report(dir / "power.csv");
    out << "instance,start,end,watts\n";
    for (std::size_t m = 0; m < r.power.size(); ++m) {
      for (const auto& seg : r.power[m]) {
        out << m << ',' << format_number(seg.start) << ',' << format_number(seg.end) << ','
            << format_number(seg.watts) << '\n';
      }
    }
  }
  {
    auto out = detail::open_report(dir / "usage.csv");
    out << "instance,time,usage\n";
    for (std::size_t m = 0; m < r.usage.size(); ++m) {
      for (const auto& u : r.usage[m]) out << m << ',' << format_number(u.time) << ',' << u.usage << '\n';
    }
  }
  {
    auto out = detail::open_report(dir / "decisions.csv");
    out << "time,instance,level,boosted,deferred,admitted,usage,min_throughput\n";
    for (const auto& d : r.decisions) {
      out << format_number(d.time) << ',' << d.instance << ',' << d.level << ','
          << (d.boosted ? 1 : 0) << ',' << (d.deferred ? 1 : 0) << ',' << d.admitted << ','
          << d.usage << ',' << format_optional(d.min_throughput) << '\n';
    }
  }
}

}  // namespace agentsim
