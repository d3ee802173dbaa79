// agentsim: generate workloads, run simulations, sweep parameters, and
// validate configuration files.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "CLI11.hpp"
#include "agentsim/cli.hpp"
#include "agentsim/config.hpp"
#include "agentsim/errors.hpp"
#include "agentsim/workload.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitPartialSweep = 3;

struct Options {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<double> rate;
  std::optional<double> duration;
  std::optional<std::size_t> instances;
  std::optional<std::string> policy;
  std::optional<std::string> controller;
  std::optional<double> level_mhz;
  std::optional<double> slo;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> epoch;
  bool no_thrash_avoidance = false;
  bool no_boost = false;
  std::string out;
  std::size_t jobs = 1;
  std::vector<std::string> axes;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment INI file");
  cmd->add_option("--set", o.set, "Override a key: section.key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "Workload seed");
  cmd->add_option("--rate", o.rate, "Agent arrival rate (agents/s)");
  cmd->add_option("--duration", o.duration, "Simulated window (s)");
  cmd->add_option("--instances", o.instances, "Number of serving instances");
  cmd->add_option("--policy", o.policy, "Routing: context-aware|round-robin|least-loaded");
  cmd->add_option("--controller", o.controller, "Controller: off|fixed|context-aware");
  cmd->add_option("--level-mhz", o.level_mhz, "Pinned frequency for --controller fixed");
  cmd->add_option("--slo", o.slo, "Per-agent throughput target (tokens/s)");
  cmd->add_option("--alpha", o.alpha, "Usage fraction that reaches the top level");
  cmd->add_option("--beta", o.beta, "Usage fraction that defers admission");
  cmd->add_option("--gamma", o.gamma, "Usage fraction that resumes admission");
  cmd->add_option("--epoch", o.epoch, "Control epoch length (s)");
  cmd->add_flag("--no-thrash-avoidance", o.no_thrash_avoidance, "Admit without usage checks");
  cmd->add_flag("--no-boost", o.no_boost, "Disable the SLO boost");
  cmd->add_option("--jobs", o.jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);
}

template <class T>
void put(agentsim::ExperimentConfig& cfg, const char* key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) {
    agentsim::apply_override(cfg, std::string(key) + "=" + *v);
  } else if constexpr (std::is_floating_point_v<T>) {
    agentsim::apply_override(cfg, std::string(key) + "=" + agentsim::format_number(*v));
  } else {
    agentsim::apply_override(cfg, std::string(key) + "=" + std::to_string(*v));
  }
}

agentsim::ExperimentConfig build_config(const Options& o) {
  agentsim::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = agentsim::load_config(o.config);
  for (const auto& s : o.set) agentsim::apply_override(cfg, s);
  put(cfg, "workload.seed", o.seed);
  put(cfg, "workload.arrival_rate", o.rate);
  put(cfg, "sim.duration", o.duration);
  put(cfg, "instance.count", o.instances);
  put(cfg, "router.policy", o.policy);
  put(cfg, "controller.mode", o.controller);
  put(cfg, "controller.level_mhz", o.level_mhz);
  put(cfg, "controller.slo", o.slo);
  put(cfg, "controller.alpha", o.alpha);
  put(cfg, "controller.beta", o.beta);
  put(cfg, "controller.gamma", o.gamma);
  put(cfg, "controller.epoch", o.epoch);
  if (o.no_thrash_avoidance) cfg.sim.controller.thrash_avoidance = false;
  if (o.no_boost) cfg.sim.controller.boost = false;
  cfg.workload.duration = cfg.sim.duration;
  return cfg;
}

int cmd_gen(const Options& o) {
  auto cfg = build_config(o);
  cfg.workload.validate();
  if (o.out.empty()) throw agentsim::ConfigError("--out", "gen needs an output trace path");
  const auto agents = agentsim::generate_workload(cfg.workload);
  const std::filesystem::path out_path(o.out);
  std::error_code ec;
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path(), ec);
  agentsim::save_trace(agents, o.out);
  std::size_t max_turns = 0;
  std::size_t total_turns = 0;
  for (const auto& a : agents) {
    max_turns = std::max(max_turns, a.turns.size());
    total_turns += a.turns.size();
  }
  const double mean = agents.empty() ? 0.0 : static_cast<double>(total_turns) / agents.size();
  std::cout << "agents=" << agents.size() << " mean_turns=" << agentsim::format_number(mean)
            << " max_turns=" << max_turns << " trace=" << o.out << '\n';
  return kExitOk;
}

int cmd_run(const Options& o) {
  const auto cfg = build_config(o);
  cfg.validate();
  const auto run = agentsim::run_experiment(cfg);
  const std::string out = o.out.empty() ? "report" : o.out;
  agentsim::write_run(cfg, run, out);
  std::cout << agentsim::summary_line(run.metrics) << '\n';
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  auto cfg = build_config(o);
  for (const auto& a : o.axes) {
    auto axis = agentsim::parse_axis(a);
    const auto it = std::find_if(cfg.sweep.begin(), cfg.sweep.end(),
                                 [&](const auto& x) { return x.key == axis.key; });
    if (it != cfg.sweep.end()) {
      *it = std::move(axis);
    } else {
      cfg.sweep.push_back(std::move(axis));
    }
  }
  cfg.validate();
  agentsim::sweep_cells(cfg.sweep);

  const auto rows = agentsim::run_sweep(cfg, cfg.sweep, std::max<std::size_t>(1, o.jobs));
  const std::filesystem::path out = o.out.empty() ? "sweep.csv" : o.out;
  agentsim::write_sweep(cfg.sweep, rows, out);
  std::cout << agentsim::sweep_header(cfg.sweep) << '\n';
  std::size_t failed = 0;
  for (const auto& r : rows) {
    std::cout << agentsim::sweep_row_line(r) << '\n';
    if (!r.error.empty()) ++failed;
  }
  if (failed > 0) {
    std::cerr << "sweep: " << failed << " of " << rows.size() << " cells failed\n";
    return kExitPartialSweep;
  }
  return kExitOk;
}

int cmd_validate(const Options& o) {
  auto cfg = build_config(o);
  cfg.validate();
  if (!cfg.sweep.empty()) {
    for (const auto& c : agentsim::sweep_cells(cfg.sweep))
      agentsim::cell_config(cfg, cfg.sweep, c).validate();
  }
  std::cout << "valid\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic LLM serving simulator with context-aware frequency control"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "Generate a workload trace (JSON lines)");
  add_common(gen, o);
  gen->add_option("--out", o.out, "Trace path")->required();

  auto* run = app.add_subcommand("run", "Run one simulation and write a report directory");
  add_common(run, o);
  run->add_option("--out", o.out, "Report directory (default: report)");

  auto* sweep = app.add_subcommand("sweep", "Run the cross product of sweep axes");
  add_common(sweep, o);
  sweep->add_option("--out", o.out, "Comparison table path (default: sweep.csv)");
  sweep->add_option("--axis", o.axes, "Axis: key=v1,v2,... (repeatable)");

  auto* validate = app.add_subcommand("validate", "Check a configuration without running");
  add_common(validate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*validate) return cmd_validate(o);
  } catch (const agentsim::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const agentsim::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const agentsim::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const agentsim::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
