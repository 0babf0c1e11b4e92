#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ttmpc/cli.hpp"
#include "ttmpc/metrics.hpp"
#include "ttmpc/scenario.hpp"
#include "ttmpc/simulation.hpp"

using namespace ttmpc;
namespace fs = std::filesystem;

namespace {

std::string config_path(const std::string& name) { return std::string(TTMPC_CONFIG_DIR) + "/" + name; }

ScenarioConfig short_run(std::uint64_t seed = 3) {
  ScenarioConfig cfg = load_scenario(config_path("default.yaml"));
  cfg.duration = 30.0;
  cfg.record_timing = false;
  cfg.seed = seed;
  return cfg;
}

std::string runlog_text(const RunLog& log) {
  std::ostringstream os;
  write_runlog_csv(log, os);
  return os.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ttmpc_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "ttmpc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, UnknownKeyReportsLineAndField) {
  try {
    parse_scenario_text("seed: 1\ncontroller:\n  horizon: 15\n  horizn: 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("controller.horizn"), std::string::npos) << msg;
  }
}

TEST(Config, BadValueReportsLineAndField) {
  try {
    parse_scenario_text("seed: 1\ndt: fast\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'dt'"), std::string::npos) << msg;
  }
}

TEST(Config, WrongListLengthIsRejected) {
  EXPECT_THROW(parse_scenario_text("controller:\n  Q: [1, 1]\n"), ConfigError);
}

TEST(Config, CentralizedWithTubeIsRejected) {
  EXPECT_THROW(parse_scenario_text("controller:\n  mode: cenmpc\n  tube: true\n"), std::exception);
}

TEST(Config, EveryShippedConfigLoads) {
  for (const auto& entry : fs::directory_iterator(TTMPC_CONFIG_DIR)) {
    if (entry.path().extension() == ".yaml") {
      EXPECT_NO_THROW(load_scenario(entry.path().string())) << entry.path();
    }
  }
}

TEST(Config, ManifestRoundTrips) {
  ScenarioConfig cfg = load_scenario(config_path("slip_drop.yaml"));
  cfg.nmhe.steering_pairing = SteeringPairing::interval_mean;
  const std::string m1 = scenario_manifest(cfg);
  const ScenarioConfig back = parse_scenario_text(m1);
  EXPECT_EQ(scenario_manifest(back), m1);
  EXPECT_EQ(back.nmhe.steering_pairing, SteeringPairing::interval_mean);
  ASSERT_TRUE(back.slip.drop_time.has_value());
  EXPECT_EQ(*back.slip.drop_time, *cfg.slip.drop_time);
  EXPECT_EQ(back.nmpc.limits.tractor, cfg.nmpc.limits.tractor);
}

TEST(RunLog, CsvRoundTripIsExact) {
  const RunLog log = run_closed_loop(short_run());
  ASSERT_TRUE(log.completed) << log.failure;
  const std::string text = runlog_text(log);
  std::istringstream in(text);
  const RunLog back = read_runlog_csv(in);
  ASSERT_EQ(back.records.size(), log.records.size());
  EXPECT_EQ(runlog_text(back), text);
  EXPECT_EQ(back.records[17].est.theta, log.records[17].est.theta);
}

TEST(RunLog, MalformedCsvReportsLine) {
  const RunLog log = run_closed_loop(short_run());
  std::string text = runlog_text(log);
  const auto second_line = text.find('\n') + 1;
  text.insert(second_line, "x");
  std::istringstream in(text);
  try {
    read_runlog_csv(in);
    FAIL() << "expected failure";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Simulation, IdenticalSeedsGiveBitwiseIdenticalLogsAndReports) {
  const RunLog a = run_closed_loop(short_run(8));
  const RunLog b = run_closed_loop(short_run(8));
  EXPECT_EQ(runlog_text(a), runlog_text(b));
  const PathSpec path = short_run().path.build();
  SummaryConfig sc;
  EXPECT_EQ(format_report(summarize(euclidean_error_series(a, path), a, sc)),
            format_report(summarize(euclidean_error_series(b, path), b, sc)));
  const RunLog c = run_closed_loop(short_run(9));
  EXPECT_NE(runlog_text(a), runlog_text(c));
}

TEST(Simulation, TimingRecordedOnlyWhenEnabled) {
  ScenarioConfig cfg = short_run();
  cfg.duration = 4.0;
  for (const RunRecord& r : run_closed_loop(cfg).records) EXPECT_EQ(r.prep_t_ms + r.fb_t_ms + r.nmhe_ms, 0.0);
  cfg.record_timing = true;
  double total = 0.0;
  for (const RunRecord& r : run_closed_loop(cfg).records) total += r.prep_t_ms + r.fb_t_ms;
  EXPECT_GT(total, 0.0);
}

TEST(Simulation, OnlineErrorAgreesWithOfflineOracle) {
  const RunLog log = run_closed_loop(short_run());
  const PathSpec path = short_run().path.build();
  const auto series = euclidean_error_series(log, path);
  for (std::size_t k = 0; k < series.size(); ++k) {
    EXPECT_LT(std::abs(series[k].tractor - log.records[k].err_t), 0.1) << "k=" << k;
    EXPECT_LT(std::abs(series[k].trailer - log.records[k].err_i), 0.1) << "k=" << k;
  }
}

TEST(Simulation, TubeIsNoOpWhenPlantMatchesNominalModel) {
  const ScenarioConfig cfg = load_scenario(config_path("nominal_plant.yaml"));
  const RunLog log = run_closed_loop(cfg);
  ASSERT_TRUE(log.completed) << log.failure;
  double worst = 0.0;
  for (const RunRecord& r : log.records) worst = std::max({worst, std::abs(r.tube_corr_t), std::abs(r.tube_corr_i)});
  EXPECT_LE(worst, 1e-9);
}

TEST(Simulation, AppliedCommandsRespectLimits) {
  const ScenarioConfig cfg = short_run();
  const RunLog log = run_closed_loop(cfg);
  EXPECT_EQ(log.constraint_violations, 0);
  for (const RunRecord& r : log.records) EXPECT_TRUE(cfg.nmpc.limits.admits(r.applied, 0.0));
}

TEST(Metrics, ConstantErrorGivesConstantMeans) {
  RunLog log;
  log.mode = "denmpc";
  std::vector<ErrorSample> series;
  for (int k = 0; k < 200; ++k) {
    RunRecord r;
    r.t = 0.2 * k;
    log.records.push_back(r);
    series.push_back({r.t, 0.1, 0.1, static_cast<SegmentClass>(k % 4), static_cast<SegmentClass>((k + 1) % 4)});
  }
  const ErrorReport rep = summarize(series, log);
  for (std::size_t c = 0; c < kSegmentClassCount; ++c) {
    EXPECT_NEAR(rep.tractor[c].mean_cm, 10.0, 1e-12);
    EXPECT_NEAR(rep.trailer[c].median_cm, 10.0, 1e-12);
  }
  std::size_t total = 0;
  for (const auto& s : rep.tractor) total += s.count;
  EXPECT_EQ(total, rep.tractor_all.count);
  EXPECT_EQ(rep.tractor_all.count, 150u);  // first 10 s excluded
}

TEST(Metrics, ErrorOfPointOffPath) {
  RunLog log;
  RunRecord r;
  r.truth.x_t = 10.5, r.truth.y_t = 0.0;
  r.truth.x_i = 10.0, r.truth.y_i = 0.0;
  log.records.push_back(r);
  const auto series = euclidean_error_series(log, build_circle(10.0, 0.1));
  EXPECT_NEAR(series[0].tractor, 0.5, 1e-12);
  EXPECT_EQ(series[0].trailer, 0.0);
  EXPECT_THROW(euclidean_error_series(RunLog{}, build_circle(10.0, 0.1)), std::invalid_argument);
}

TEST(Metrics, TimingTableHasPhaseRows) {
  const RunLog log = run_closed_loop(short_run());
  const std::string text = format_report(summarize(euclidean_error_series(log, short_run().path.build()), log));
  for (const char* row : {"preparation", "feedback", "overall", "DeNMPC tractor", "DeNMPC trailer", "NMHE"})
    EXPECT_NE(text.find(row), std::string::npos) << row;
}

TEST(Cli, UnknownFlagIsUsageError) {
  std::string err;
  EXPECT_EQ(cli({"simulate", "--bogus"}, nullptr, &err), 2);
  EXPECT_FALSE(err.empty());
  EXPECT_EQ(cli({}), 2);
}

TEST(Cli, MissingConfigIsRuntimeError) {
  std::string err;
  EXPECT_EQ(cli({"simulate", "/nonexistent/ttmpc.yaml"}, nullptr, &err), 1);
  EXPECT_NE(err.find("cannot open"), std::string::npos) << err;
}

TEST(Cli, BadConfigReportsLine) {
  const fs::path dir = temp_dir("badcfg");
  std::ofstream(dir / "bad.yaml") << "seed: 1\nplant:\n  sped: 2\n";
  std::string err;
  EXPECT_EQ(cli({"simulate", (dir / "bad.yaml").string(), "--out", (dir / "out").string()}, nullptr, &err), 1);
  EXPECT_NE(err.find("line 3"), std::string::npos) << err;
  EXPECT_NE(err.find("plant.sped"), std::string::npos) << err;
}

TEST(Cli, SimulateWritesArtifactsAndReportReproducesThem) {
  const fs::path dir = temp_dir("sim");
  std::ofstream(dir / "cfg.yaml") << "duration: 20\nrecord_timing: false\n";
  EXPECT_EQ(cli({"simulate", "--config", (dir / "cfg.yaml").string(), "--out", (dir / "run").string(), "--seed", "4"}),
            0);
  for (const char* f : {"manifest.yaml", "runlog.csv", "controller_trace.csv", "estimator_trace.csv", "path.csv",
                        "report.txt"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  std::string out;
  EXPECT_EQ(cli({"report", (dir / "run" / "runlog.csv").string()}, &out), 0);
  EXPECT_EQ(out, slurp(dir / "run" / "report.txt"));
  EXPECT_EQ(load_scenario((dir / "run" / "manifest.yaml").string()).seed, 4u);
}

TEST(Cli, ModeOverrideSelectsCentralizedController) {
  const fs::path dir = temp_dir("mode");
  std::ofstream(dir / "cfg.yaml") << "duration: 12\nrecord_timing: false\n";
  std::string out;
  EXPECT_EQ(cli({"simulate", (dir / "cfg.yaml").string(), "--mode", "cenmpc", "--out", (dir / "run").string()}, &out),
            0);
  EXPECT_NE(out.find("mode: cenmpc"), std::string::npos);
  EXPECT_EQ(cli({"simulate", (dir / "cfg.yaml").string(), "--mode", "lqr"}), 2);
}

TEST(Cli, PathEmitsCsv) {
  std::string out;
  EXPECT_EQ(cli({"path", "--radii", "10", "--straight", "20"}, &out), 0);
  EXPECT_EQ(out.rfind("s,x,y,kind,curvature\n", 0), 0u);
  std::istringstream in(out);
  const PathSpec p = read_path_csv(in);
  EXPECT_NEAR(p.length(), 40.0 + eight_shape_length(10.0, 20.0), 1e-5);
}

TEST(Cli, ComparePrintsPerClassDeltas) {
  const fs::path dir = temp_dir("cmp");
  std::ofstream(dir / "a.yaml") << "duration: 20\nrecord_timing: false\ncontroller:\n  mode: denmpc\n";
  std::ofstream(dir / "b.yaml") << "duration: 20\nrecord_timing: false\n";
  std::string out;
  EXPECT_EQ(cli({"compare", (dir / "a.yaml").string(), (dir / "b.yaml").string(), "--seeds", "2"}, &out), 0);
  for (const char* row : {"straight", "curve_0.100", "all"}) EXPECT_NE(out.find(row), std::string::npos) << row;
}
