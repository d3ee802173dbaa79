#pragma once

// Command implementations behind the agentsim tool: single runs, report
// directories with a config echo, and parallel sweeps.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "agentsim/config.hpp"
#include "agentsim/engine.hpp"
#include "agentsim/errors.hpp"
#include "agentsim/metrics.hpp"
#include "agentsim/workload.hpp"

namespace agentsim {

struct RunOutput {
  SimulationResult result;
  SystemMetrics metrics;
};

inline RunOutput run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig effective = cfg;
  effective.workload.duration = cfg.sim.duration;
  const auto agents = generate_workload(effective.workload);
  RunOutput out;
  out.result = run_simulation(effective.sim, agents);
  out.metrics = system_metrics(out.result, effective.sim.controller.slo_target);
  return out;
}

// "key=value" pairs separated by spaces, in summary_fields() order.
inline std::string summary_line(const SystemMetrics& m) {
  const auto& fields = summary_fields();
  const auto values = summary_values(m);
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ' ';
    line += fields[i] + "=" + values[i];
  }
  return line;
}

// Writes the CSV reports plus config.ini, the effective configuration.
inline void write_run(const ExperimentConfig& cfg, const RunOutput& run,
                      const std::filesystem::path& dir) {
  export_report(run.result, cfg.sim.controller.slo_target, dir);
  ExperimentConfig echo = cfg;
  echo.sweep.clear();
  save_config(echo, dir / "config.ini");
}

struct SweepCell {
  std::vector<std::string> values;  // one per axis
};

// Cross product of the axes; the first axis varies slowest.
inline std::vector<SweepCell> sweep_cells(const std::vector<SweepAxis>& axes) {
  if (axes.empty()) throw ConfigError("sweep", "no axes given");
  std::vector<SweepCell> cells{SweepCell{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw ConfigError("sweep." + axis.key, "axis has no values");
    std::vector<SweepCell> next;
    next.reserve(cells.size() * axis.values.size());
    for (const auto& c : cells) {
      for (const auto& v : axis.values) {
        SweepCell n = c;
        n.values.push_back(v);
        next.push_back(std::move(n));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

// The base config with one cell's axis values applied.
inline ExperimentConfig cell_config(const ExperimentConfig& base,
                                    const std::vector<SweepAxis>& axes, const SweepCell& cell) {
  ExperimentConfig cfg = base;
  cfg.sweep.clear();
  for (std::size_t i = 0; i < axes.size(); ++i)
    apply_override(cfg, axes[i].key + "=" + cell.values[i]);
  return cfg;
}

struct SweepRow {
  std::vector<std::string> axis_values;
  std::vector<std::string> metrics;  // empty when the cell failed
  std::string error;
};

inline SweepRow run_cell(const ExperimentConfig& base, const std::vector<SweepAxis>& axes,
                         const SweepCell& cell) {
  SweepRow row;
  row.axis_values = cell.values;
  try {
    const ExperimentConfig cfg = cell_config(base, axes, cell);
    row.metrics = summary_values(run_experiment(cfg).metrics);
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

// Runs every cell with up to `jobs` worker threads. Rows come back in cell
// order regardless of completion order.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                       const std::vector<SweepAxis>& axes, std::size_t jobs) {
  const auto cells = sweep_cells(axes);
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) rows[i] = run_cell(base, axes, cells[i]);
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string sweep_header(const std::vector<SweepAxis>& axes) {
  std::vector<std::string> cells;
  for (const auto& a : axes) cells.push_back(a.key);
  for (const auto& f : summary_fields()) cells.push_back(f);
  cells.push_back("error");
  return join_csv(cells);
}

inline std::string sweep_row_line(const SweepRow& row) {
  std::vector<std::string> cells;
  for (const auto& v : row.axis_values) cells.push_back(csv_escape(v));
  if (row.metrics.empty()) {
    cells.insert(cells.end(), summary_fields().size(), std::string());
  } else {
    cells.insert(cells.end(), row.metrics.begin(), row.metrics.end());
  }
  cells.push_back(csv_escape(row.error));
  return join_csv(cells);
}

inline void write_sweep(const std::vector<SweepAxis>& axes, const std::vector<SweepRow>& rows,
                        const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << sweep_header(axes) << '\n';
  for (const auto& r : rows) out << sweep_row_line(r) << '\n';
}

}  // namespace agentsim
