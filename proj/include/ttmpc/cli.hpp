#pragma once

// Command-line front end: simulate, compare, path and report subcommands.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttmpc/metrics.hpp"
#include "ttmpc/scenario.hpp"
#include "ttmpc/simulation.hpp"

namespace ttmpc {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

namespace detail {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> tube;
};

inline ScenarioConfig load_with_overrides(const std::string& file, const Overrides& o) {
  ScenarioConfig cfg = file.empty() ? parse_scenario(YAML::Node()) : load_scenario(file);
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode) apply_mode(cfg, *o.mode);
  if (o.tube) cfg.tube = *o.tube == "on";
  try {
    cfg.finalize();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid scenario: ") + e.what());
  }
  return cfg;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << content;
  if (!f) throw std::runtime_error("failed writing '" + p.string() + "'");
}

template <typename Writer>
std::string render(Writer&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

/// Writes every artifact of a run into `dir` and returns the report.
inline ErrorReport write_run(const ScenarioConfig& cfg, const RunLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const PathSpec path = cfg.path.build();
  write_file(dir / "manifest.yaml", scenario_manifest(cfg));
  write_file(dir / "runlog.csv", render([&](std::ostream& os) { write_runlog_csv(log, os); }));
  write_file(dir / "controller_trace.csv", render([&](std::ostream& os) { write_controller_trace(log, os); }));
  write_file(dir / "estimator_trace.csv", render([&](std::ostream& os) { write_estimator_trace(log, os); }));
  write_file(dir / "path.csv", render([&](std::ostream& os) { write_path_csv(path, os); }));
  const ErrorReport rep = summarize(euclidean_error_series(log, path), log);
  std::string text = format_report(rep);
  if (!log.completed) text += "\nrun aborted: " + log.failure + "\n";
  write_file(dir / "report.txt", text);
  return rep;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Decentralized tube NMPC and NMHE for a tractor-trailer: simulation and metrics", "ttmpc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kSoftwareVersion);

  detail::Overrides ov;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", ov.seed, "Random seed");
    sub->add_option("--mode", ov.mode, "Controller mode")->check(CLI::IsMember({"denmpc", "denmpc-tube", "cenmpc"}));
    sub->add_option("--tube", ov.tube, "Tube layer")->check(CLI::IsMember({"on", "off"}));
  };

  std::string sim_config, sim_out = "out";
  auto* sim = app.add_subcommand("simulate", "Run one closed-loop scenario and write logs and the report");
  sim->add_option("config,--config", sim_config, "Scenario file (YAML)");
  sim->add_option("--out", sim_out, "Output directory");
  add_overrides(sim);

  std::vector<std::string> cmp_configs;
  std::string cmp_out;
  int cmp_seeds = 1;
  auto* cmp = app.add_subcommand("compare", "Paired-seed comparison of two scenarios");
  cmp->add_option("configs", cmp_configs, "Scenario A and scenario B")->expected(2)->required();
  cmp->add_option("--seeds", cmp_seeds, "Number of paired seeds")->check(CLI::PositiveNumber);
  cmp->add_option("--out", cmp_out, "Directory for per-run artifacts");
  cmp->add_option("--seed", ov.seed, "First seed of the sequence");

  std::string path_config, path_out;
  std::vector<double> radii;
  std::optional<double> straight, spacing, connector;
  auto* pth = app.add_subcommand("path", "Emit the reference path as CSV");
  pth->add_option("params,--config", path_config, "Scenario file whose path section is used");
  pth->add_option("--radii", radii, "Curve radii of the figure-eights");
  pth->add_option("--straight", straight, "Straight length of each figure-eight");
  pth->add_option("--spacing", spacing, "Sample spacing");
  pth->add_option("--connector", connector, "Distance between figure-eight crossings");
  pth->add_option("--out", path_out, "Output file (default: stdout)");

  std::string rep_log, rep_config, rep_out;
  auto* rep = app.add_subcommand("report", "Recompute the error report from a run log");
  rep->add_option("runlog", rep_log, "runlog.csv")->required();
  rep->add_option("--config", rep_config, "Scenario or manifest (default: manifest.yaml next to the log)");
  rep->add_option("--out", rep_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return kExitUsage;
  }

  try {
    if (sim->parsed()) {
      const ScenarioConfig cfg = detail::load_with_overrides(sim_config, ov);
      const RunLog log = run_closed_loop(cfg);
      const ErrorReport r = detail::write_run(cfg, log, sim_out);
      out << format_report(r);
      if (!log.completed) {
        err << "run aborted: " << log.failure << "\n";
        return kExitRuntime;
      }
      out << "artifacts written to " << sim_out << "\n";
      return kExitOk;
    }

    if (cmp->parsed()) {
      detail::Overrides base;
      const ScenarioConfig a0 = detail::load_with_overrides(cmp_configs[0], base);
      const ScenarioConfig b0 = detail::load_with_overrides(cmp_configs[1], base);
      const std::uint64_t first = ov.seed.value_or(a0.seed);
      std::array<std::vector<double>, kSegmentClassCount> da_t, da_i;
      std::vector<double> all_t, all_i;
      int failures = 0;
      for (int s = 0; s < cmp_seeds; ++s) {
        ScenarioConfig a = a0, b = b0;
        a.seed = b.seed = first + static_cast<std::uint64_t>(s);
        const RunLog la = run_closed_loop(a), lb = run_closed_loop(b);
        if (!la.completed || !lb.completed) ++failures;
        if (!cmp_out.empty()) {
          detail::write_run(a, la, std::filesystem::path(cmp_out) / ("A_seed" + std::to_string(a.seed)));
          detail::write_run(b, lb, std::filesystem::path(cmp_out) / ("B_seed" + std::to_string(b.seed)));
        }
        const ErrorReport ra = summarize(euclidean_error_series(la, a.path.build()), la);
        const ErrorReport rb = summarize(euclidean_error_series(lb, b.path.build()), lb);
        for (std::size_t c = 0; c < kSegmentClassCount; ++c) {
          if (ra.tractor[c].count && rb.tractor[c].count) da_t[c].push_back(rb.tractor[c].mean_cm - ra.tractor[c].mean_cm);
          if (ra.trailer[c].count && rb.trailer[c].count) da_i[c].push_back(rb.trailer[c].mean_cm - ra.trailer[c].mean_cm);
        }
        all_t.push_back(rb.tractor_all.mean_cm - ra.tractor_all.mean_cm);
        all_i.push_back(rb.trailer_all.mean_cm - ra.trailer_all.mean_cm);
      }
      out << "A: " << cmp_configs[0] << " (" << a0.mode_name() << ")\n";
      out << "B: " << cmp_configs[1] << " (" << b0.mode_name() << ")\n";
      out << "paired seeds: " << cmp_seeds << " from " << first << "\n\n";
      out << "mean error delta B - A [cm], median over seeds\n";
      out << "segment         tractor   trailer\n";
      auto line = [&](const char* seg, const std::vector<double>& t, const std::vector<double>& i) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-12s %10.2f %9.2f\n", seg, median(t), median(i));
        out << buf;
      };
      for (std::size_t c = 0; c < kSegmentClassCount; ++c)
        line(to_string(static_cast<SegmentClass>(c)), da_t[c], da_i[c]);
      line("all", all_t, all_i);
      if (failures > 0) {
        err << failures << " paired run(s) aborted\n";
        return kExitRuntime;
      }
      return kExitOk;
    }

    if (pth->parsed()) {
      PathConfig pc = path_config.empty() ? PathConfig{} : load_scenario(path_config).path;
      if (!radii.empty()) pc.kind = PathKind::eight, pc.eight.radii = radii;
      if (straight) pc.eight.straight_length = *straight;
      if (connector) pc.eight.connector_length = *connector;
      if (spacing) pc.spacing = *spacing;
      const PathSpec path = pc.build();
      if (path_out.empty()) {
        write_path_csv(path, out);
      } else {
        detail::write_file(path_out, detail::render([&](std::ostream& os) { write_path_csv(path, os); }));
      }
      return kExitOk;
    }

    if (rep->parsed()) {
      std::ifstream in(rep_log);
      if (!in) throw std::runtime_error("cannot open run log '" + rep_log + "'");
      RunLog log = read_runlog_csv(in);
      const std::string cfg_file =
          rep_config.empty() ? (std::filesystem::path(rep_log).parent_path() / "manifest.yaml").string() : rep_config;
      const ScenarioConfig cfg = load_scenario(cfg_file);
      log.mode = cfg.mode_name();
      const std::string text = format_report(summarize(euclidean_error_series(log, cfg.path.build()), log));
      if (rep_out.empty()) out << text;
      else detail::write_file(rep_out, text);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace ttmpc
