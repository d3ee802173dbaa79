#pragma once

// Experiment configuration: an INI file whose sections mirror the module
// configs, command-line overrides, and an exact echo of the effective config.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "agentsim/controller.hpp"
#include "agentsim/engine.hpp"
#include "agentsim/errors.hpp"
#include "agentsim/instance.hpp"
#include "agentsim/router.hpp"
#include "agentsim/workload.hpp"

namespace agentsim {

// One sweep dimension: a config key and the values it takes, in order.
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct ExperimentConfig {
  WorkloadSpec workload;
  SimConfig sim;
  std::vector<SweepAxis> sweep;

  void validate() const {
    workload.validate();
    sim.validate();
    if (workload.arrival_process == ArrivalProcess::replay &&
        !std::filesystem::is_regular_file(workload.replay_path))
      throw ConfigError("workload.trace", "file '" + workload.replay_path + "' does not exist");
    for (const auto& axis : sweep) {
      if (axis.values.empty()) throw ConfigError("sweep." + axis.key, "axis has no values");
    }
  }
};

// Short axis names accepted besides full "section.key" paths.
inline std::string resolve_axis_key(const std::string& name) {
  if (name == "rate") return "workload.arrival_rate";
  if (name == "seed") return "workload.seed";
  if (name == "level_mhz" || name == "cap_mhz") return "controller.level_mhz";
  if (name == "slo" || name == "tau") return "controller.slo";
  if (name == "policy") return "router.policy";
  if (name == "controller") return "controller.mode";
  if (name == "instances") return "instance.count";
  if (name.find('.') == std::string::npos)
    throw ConfigError("sweep." + name, "unknown axis; use section.key or a short name");
  return name;
}

// Parses "key=v1,v2,...". Values are kept as text and applied per cell.
inline SweepAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(text, "axis must look like key=v1,v2");
  SweepAxis axis;
  std::string name = text.substr(0, eq);
  name.erase(0, name.find_first_not_of(" \t"));
  name.erase(name.find_last_not_of(" \t") + 1);
  axis.key = resolve_axis_key(name);
  std::string item;
  std::istringstream in(text.substr(eq + 1));
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) throw ConfigError("sweep." + axis.key, "empty axis value");
    axis.values.push_back(item);
  }
  if (axis.values.empty()) throw ConfigError("sweep." + axis.key, "axis has no values");
  return axis;
}

namespace config_detail {

using boost::property_tree::ptree;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key, "expected a number, got '" + s + "'");
  return v;
}

inline std::int64_t to_int(const std::string& key, std::string_view text) {
  const std::string s = trim(text);
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key, "expected an integer, got '" + s + "'");
  return v;
}

inline bool to_bool(const std::string& key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key, "expected true|false, got '" + s + "'");
}

inline std::vector<double> to_list(const std::string& key, std::string_view text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) out.push_back(to_double(key, item));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += num(v[i]);
  }
  return s;
}

inline std::optional<std::string> get(const ptree& t, const std::string& key) {
  if (auto v = t.get_optional<std::string>(ptree::path_type(key, '.'))) return trim(*v);
  return std::nullopt;
}

inline void read_dist(const ptree& t, const std::string& prefix, Distribution& d) {
  const std::string sec = "workload." + prefix;
  if (auto v = get(t, sec + "_dist")) d.kind = parse_dist_kind(*v, sec + "_dist");
  if (auto v = get(t, sec + "_mean")) d.mean = to_double(sec + "_mean", *v);
  if (auto v = get(t, sec + "_sigma")) d.sigma = to_double(sec + "_sigma", *v);
  if (auto v = get(t, sec + "_min")) d.min = to_double(sec + "_min", *v);
  if (auto v = get(t, sec + "_max")) d.max = to_double(sec + "_max", *v);
}

inline void write_dist(ptree& t, const std::string& prefix, const Distribution& d) {
  const std::string sec = "workload." + prefix;
  t.put(sec + "_dist", std::string(to_string(d.kind)));
  t.put(sec + "_mean", num(d.mean));
  t.put(sec + "_sigma", num(d.sigma));
  t.put(sec + "_min", num(d.min));
  t.put(sec + "_max", num(d.max));
}

inline void read_frequency(const ptree& t, InstanceConfig& inst) {
  const bool explicit_table = get(t, "frequency.prefill_rate") || get(t, "frequency.decode_rate") ||
                              get(t, "frequency.active_power");
  if (!explicit_table) {
    FrequencyTableModel m;
    bool touched = false;
    auto num_key = [&](const char* key, double& field) {
      if (auto v = get(t, std::string("frequency.") + key)) {
        field = to_double(std::string("frequency.") + key, *v);
        touched = true;
      }
    };
    if (auto v = get(t, "frequency.mhz")) {
      m.mhz = to_list("frequency.mhz", *v);
      touched = true;
    }
    num_key("top_prefill_rate", m.top_prefill_rate);
    num_key("top_decode_rate", m.top_decode_rate);
    num_key("rate_exponent", m.rate_exponent);
    num_key("min_active_power", m.min_active_power);
    num_key("max_active_power", m.max_active_power);
    if (auto v = get(t, "frequency.idle_power")) {
      const auto list = to_list("frequency.idle_power", *v);
      if (list.size() != 1)
        throw ConfigError("frequency.idle_power", "expected one value without explicit rates");
      m.idle_power = list[0];
      touched = true;
    }
    if (touched) inst.frequency_table = make_frequency_table(m);
    return;
  }
  const char* keys[] = {"mhz", "prefill_rate", "decode_rate", "active_power", "idle_power"};
  std::vector<std::vector<double>> cols;
  for (const char* k : keys) {
    const std::string key = std::string("frequency.") + k;
    const auto v = get(t, key);
    if (!v) throw ConfigError(key, "required when the table is given explicitly");
    cols.push_back(to_list(key, *v));
  }
  const std::size_t n = cols[0].size();
  if (cols[4].size() == 1) cols[4].assign(n, cols[4][0]);
  for (std::size_t i = 1; i < cols.size(); ++i) {
    if (cols[i].size() != n)
      throw ConfigError(std::string("frequency.") + keys[i], "length differs from frequency.mhz");
  }
  std::vector<FrequencyLevel> levels;
  for (std::size_t i = 0; i < n; ++i)
    levels.push_back({cols[0][i], cols[1][i], cols[2][i], cols[3][i], cols[4][i]});
  inst.frequency_table = FrequencyTable(std::move(levels));
}

}  // namespace config_detail

// Applies every key present in `t` on top of `cfg`. Unknown sections and keys
// are errors.
inline void apply_ptree(const boost::property_tree::ptree& t, ExperimentConfig& cfg) {
  using namespace config_detail;
  static const std::vector<std::pair<std::string, std::vector<std::string>>> known = {
      {"workload",
       {"arrival_rate", "arrival_process", "seed", "trace", "observation_growth",
        "turns_dist", "turns_mean", "turns_sigma", "turns_min", "turns_max",
        "prefill_dist", "prefill_mean", "prefill_sigma", "prefill_min", "prefill_max",
        "decode_dist", "decode_mean", "decode_sigma", "decode_min", "decode_max",
        "tool_time_dist", "tool_time_mean", "tool_time_sigma", "tool_time_min", "tool_time_max",
        "initial_prompt_dist", "initial_prompt_mean", "initial_prompt_sigma",
        "initial_prompt_min", "initial_prompt_max"}},
      {"sim", {"duration", "record_interval"}},
      {"instance",
       {"count", "capacity_tokens", "thrash_mode", "thrash_latency_factor", "batch_knee",
        "max_batch"}},
      {"frequency",
       {"mhz", "top_prefill_rate", "top_decode_rate", "rate_exponent", "min_active_power",
        "max_active_power", "idle_power", "prefill_rate", "decode_rate", "active_power"}},
      {"controller",
       {"mode", "alpha", "beta", "gamma", "slo", "epoch", "level_mhz", "boost",
        "thrash_avoidance", "power_budget"}},
      {"router",
       {"policy", "consolidation_threshold", "reassign_interval", "imbalance_ratio",
        "reset_only_on_reassign", "migration_delay"}},
      {"sweep", {}},
  };
  for (const auto& [section, body] : t) {
    const auto it = std::find_if(known.begin(), known.end(),
                                 [&](const auto& k) { return k.first == section; });
    if (it == known.end()) throw ConfigError(section, "unknown section");
    if (section == "sweep") {
      for (const auto& [key, value] : body)
        cfg.sweep.push_back(parse_axis(key + "=" + value.data()));
      continue;
    }
    for (const auto& [key, value] : body) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError(section + "." + key, "unknown key");
    }
  }

  auto& w = cfg.workload;
  auto& s = cfg.sim;
  if (auto v = get(t, "workload.arrival_rate")) w.arrival_rate = to_double("workload.arrival_rate", *v);
  if (auto v = get(t, "workload.arrival_process")) w.arrival_process = parse_arrival_process(*v);
  if (auto v = get(t, "workload.seed"))
    w.seed = static_cast<std::uint64_t>(to_int("workload.seed", *v));
  if (auto v = get(t, "workload.trace")) {
    w.replay_path = *v;
    if (!v->empty()) w.arrival_process = ArrivalProcess::replay;
  }
  if (auto v = get(t, "workload.observation_growth"))
    w.observation_growth = to_double("workload.observation_growth", *v);
  read_dist(t, "turns", w.turn_count);
  read_dist(t, "prefill", w.prefill_tokens);
  read_dist(t, "decode", w.decode_tokens);
  read_dist(t, "tool_time", w.tool_time);
  read_dist(t, "initial_prompt", w.initial_prompt);

  if (auto v = get(t, "sim.duration")) s.duration = to_double("sim.duration", *v);
  if (auto v = get(t, "sim.record_interval"))
    s.record_interval = to_double("sim.record_interval", *v);
  w.duration = s.duration;

  auto& inst = s.instance;
  if (auto v = get(t, "instance.count")) {
    const auto n = to_int("instance.count", *v);
    if (n < 1) throw ConfigError("instance.count", "must be >= 1");
    s.instances = static_cast<std::size_t>(n);
  }
  if (auto v = get(t, "instance.capacity_tokens"))
    inst.capacity_tokens = to_int("instance.capacity_tokens", *v);
  if (auto v = get(t, "instance.thrash_mode")) inst.thrash_mode = parse_thrash_mode(*v);
  if (auto v = get(t, "instance.thrash_latency_factor"))
    inst.thrash_latency_factor = to_double("instance.thrash_latency_factor", *v);
  if (auto v = get(t, "instance.batch_knee"))
    inst.batch_interference.knee = to_double("instance.batch_knee", *v);
  if (auto v = get(t, "instance.max_batch")) {
    const auto n = to_int("instance.max_batch", *v);
    if (n < 0) throw ConfigError("instance.max_batch", "must be >= 0");
    inst.max_batch = static_cast<std::size_t>(n);
  }
  read_frequency(t, inst);

  auto& c = s.controller;
  if (auto v = get(t, "controller.mode")) c.mode = parse_controller_mode(*v);
  if (auto v = get(t, "controller.alpha")) c.alpha = to_double("controller.alpha", *v);
  if (auto v = get(t, "controller.beta")) c.beta = to_double("controller.beta", *v);
  if (auto v = get(t, "controller.gamma")) c.gamma = to_double("controller.gamma", *v);
  if (auto v = get(t, "controller.slo")) c.slo_target = to_double("controller.slo", *v);
  if (auto v = get(t, "controller.epoch")) c.epoch_length = to_double("controller.epoch", *v);
  if (auto v = get(t, "controller.level_mhz"))
    c.fixed_level_mhz = to_double("controller.level_mhz", *v);
  if (auto v = get(t, "controller.boost")) c.boost = to_bool("controller.boost", *v);
  if (auto v = get(t, "controller.thrash_avoidance"))
    c.thrash_avoidance = to_bool("controller.thrash_avoidance", *v);
  if (auto v = get(t, "controller.power_budget"))
    c.power_budget = to_double("controller.power_budget", *v);

  auto& r = s.router;
  if (auto v = get(t, "router.policy")) r.policy = parse_routing_policy(*v);
  if (auto v = get(t, "router.consolidation_threshold"))
    r.consolidation_threshold = to_double("router.consolidation_threshold", *v);
  if (auto v = get(t, "router.reassign_interval")) {
    const auto n = to_int("router.reassign_interval", *v);
    if (n < 1) throw ConfigError("router.reassign_interval", "must be >= 1");
    r.reassign_interval = static_cast<std::uint32_t>(n);
  }
  if (auto v = get(t, "router.imbalance_ratio"))
    r.imbalance_ratio = to_double("router.imbalance_ratio", *v);
  if (auto v = get(t, "router.reset_only_on_reassign"))
    r.reset_only_on_reassign = to_bool("router.reset_only_on_reassign", *v);
  if (auto v = get(t, "router.migration_delay"))
    r.migration_delay = to_double("router.migration_delay", *v);
}

inline boost::property_tree::ptree parse_ini_text(const std::string& text) {
  boost::property_tree::ptree t;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, t);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.line(), e.message());
  }
  return t;
}

inline boost::property_tree::ptree read_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini_text(ss.str());
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg;
  apply_ptree(read_ini_file(path), cfg);
  return cfg;
}

// Applies one "section.key=value" override.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(assignment, "override must look like section.key=value");
  const std::string key = config_detail::trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos)
    throw ConfigError(key, "override key must look like section.key");
  boost::property_tree::ptree t;
  t.put(boost::property_tree::ptree::path_type(key, '.'),
        config_detail::trim(assignment.substr(eq + 1)));
  apply_ptree(t, cfg);
}

// Every field of `cfg`, including the frequency table level by level, so
// loading the echo reproduces the run exactly.
inline boost::property_tree::ptree to_ptree(const ExperimentConfig& cfg) {
  using namespace config_detail;
  ptree t;
  const auto& w = cfg.workload;
  const auto& s = cfg.sim;
  t.put("workload.arrival_rate", num(w.arrival_rate));
  t.put("workload.arrival_process", std::string(to_string(w.arrival_process)));
  t.put("workload.seed", std::to_string(w.seed));
  t.put("workload.trace", w.replay_path);
  t.put("workload.observation_growth", num(w.observation_growth));
  write_dist(t, "turns", w.turn_count);
  write_dist(t, "prefill", w.prefill_tokens);
  write_dist(t, "decode", w.decode_tokens);
  write_dist(t, "tool_time", w.tool_time);
  write_dist(t, "initial_prompt", w.initial_prompt);

  t.put("sim.duration", num(s.duration));
  t.put("sim.record_interval", num(s.record_interval));

  const auto& inst = s.instance;
  t.put("instance.count", std::to_string(s.instances));
  t.put("instance.capacity_tokens", std::to_string(inst.capacity_tokens));
  t.put("instance.thrash_mode", std::string(to_string(inst.thrash_mode)));
  t.put("instance.thrash_latency_factor", num(inst.thrash_latency_factor));
  t.put("instance.batch_knee", num(inst.batch_interference.knee));
  t.put("instance.max_batch", std::to_string(inst.max_batch));

  std::vector<double> mhz, pre, dec, act, idle;
  for (const auto& l : inst.frequency_table.levels()) {
    mhz.push_back(l.nominal_mhz);
    pre.push_back(l.prefill_rate);
    dec.push_back(l.decode_rate);
    act.push_back(l.active_power);
    idle.push_back(l.idle_power);
  }
  t.put("frequency.mhz", join(mhz));
  t.put("frequency.prefill_rate", join(pre));
  t.put("frequency.decode_rate", join(dec));
  t.put("frequency.active_power", join(act));
  t.put("frequency.idle_power", join(idle));

  const auto& c = s.controller;
  t.put("controller.mode", std::string(to_string(c.mode)));
  t.put("controller.alpha", num(c.alpha));
  t.put("controller.beta", num(c.beta));
  t.put("controller.gamma", num(c.gamma));
  t.put("controller.slo", num(c.slo_target));
  t.put("controller.epoch", num(c.epoch_length));
  t.put("controller.level_mhz", num(c.fixed_level_mhz));
  t.put("controller.boost", c.boost ? "true" : "false");
  t.put("controller.thrash_avoidance", c.thrash_avoidance ? "true" : "false");
  t.put("controller.power_budget", num(c.power_budget));

  const auto& r = s.router;
  t.put("router.policy", std::string(to_string(r.policy)));
  t.put("router.consolidation_threshold", num(r.consolidation_threshold));
  t.put("router.reassign_interval", std::to_string(r.reassign_interval));
  t.put("router.imbalance_ratio", num(r.imbalance_ratio));
  t.put("router.reset_only_on_reassign", r.reset_only_on_reassign ? "true" : "false");
  t.put("router.migration_delay", num(r.migration_delay));

  if (!cfg.sweep.empty()) {
    ptree& sweep = t.put_child("sweep", ptree{});
    for (const auto& axis : cfg.sweep) {
      std::string joined;
      for (std::size_t i = 0; i < axis.values.size(); ++i) {
        if (i) joined += ',';
        joined += axis.values[i];
      }
      sweep.push_back({axis.key, ptree(joined)});
    }
  }
  return t;
}

inline std::string to_ini_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  boost::property_tree::ini_parser::write_ini(out, to_ptree(cfg));
  return out.str();
}

inline void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_ini_text(cfg);
}

}  // namespace agentsim
