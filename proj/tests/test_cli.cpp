#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <memory>

#include "helpers.hpp"

using namespace ttf;
using namespace testing_helpers;

namespace {

int run(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(TTF_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(read_file(path)); }

SynthConfig static_config() {
  SynthConfig cfg;
  cfg.grid_rows = 3;
  cfg.grid_cols = 3;
  cfg.n_vehicles = 5;
  cfg.hours = 72;
  cfg.coverage = 0.6;
  cfg.arterial.amplitude = 0.0;
  cfg.side.amplitude = 0.0;
  return cfg;
}

/// One static-world pipeline shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>();
    const auto& d = *dir_;
    write_file(d / "synth.json", static_config().to_json().dump());
    TrainConfig tc;
    tc.d = 4;
    tc.h = 1;
    tc.N = 1;
    tc.L = 3;
    tc.epochs = 3;
    tc.lr = 3e-3;
    write_file(d / "train.json", tc.to_json().dump());
    const std::string log = d / "log.txt";
    const std::string w = d / "world";
    steps_.push_back(run("synth --config " + (d / "synth.json") + " --out " + w, log));
    steps_.push_back(run("ingest --network " + w + "/network.json --trips " + w + "/trips.csv --out " +
                             (d / "reports.csv"),
                         log));
    steps_.push_back(run("stats --reports " + (d / "reports.csv") + " --network " + w + "/network.json --out " +
                             (d / "stats.json"),
                         log));
    steps_.push_back(run("factorize --reports " + (d / "reports.csv") + " --stats " + (d / "stats.json") +
                             " --network " + w + "/network.json --d 4 --sweeps 5 --out " + (d / "emb.csv"),
                         log));
    steps_.push_back(run("train --config " + (d / "train.json") + " --reports " + (d / "reports.csv") + " --stats " +
                             (d / "stats.json") + " --embeddings " + (d / "emb.csv") + " --out " +
                             (d / "model.ttfc") + " --curve " + (d / "curve.csv"),
                         log));
    steps_.push_back(run("evaluate --model " + (d / "model.ttfc") + " --reports " + (d / "reports.csv") +
                             " --stats " + (d / "stats.json") + " --groundtruth " + w +
                             "/groundtruth.json --horizon 2 --out " + (d / "eval.json"),
                         log));
  }
  static void TearDownTestSuite() { dir_.reset(); }

  static std::unique_ptr<TempDir> dir_;
  static std::vector<int> steps_;
};

std::unique_ptr<TempDir> CliPipeline::dir_;
std::vector<int> CliPipeline::steps_;

}  // namespace

TEST(Cli, GradcheckSucceeds) {
  TempDir dir;
  EXPECT_EQ(run("gradcheck --seed 7", dir / "out.txt"), 0);
  EXPECT_NE(read_file(dir / "out.txt").find("gradcheck passed"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  TempDir dir;
  const std::string log = dir / "log.txt";
  EXPECT_NE(run("", log), 0);
  EXPECT_NE(run("frobnicate", log), 0);
  EXPECT_NE(run("ingest --network " + (dir / "missing.json") + " --trips x --out y", log), 0);
  write_file(dir / "bad.json", "{\"grid_rows\": 3, \"colour\": 1}");
  EXPECT_EQ(run("synth --config " + (dir / "bad.json") + " --out " + (dir / "w"), log), 1);
  EXPECT_NE(read_file(log).find("colour"), std::string::npos);
}

TEST(Cli, IngestReportsMalformedRows) {
  TempDir dir;
  save_network(grid3x3(), dir / "net.json");
  write_file(dir / "trips.csv", "trip_id,lon,lat,t\nA,0,0,notanumber\n");
  EXPECT_EQ(run("ingest --network " + (dir / "net.json") + " --trips " + (dir / "trips.csv") + " --out " +
                    (dir / "r.csv"),
                dir / "log.txt"),
            2);
  EXPECT_NE(read_file(dir / "log.txt").find(":2:"), std::string::npos);
}

TEST_F(CliPipeline, AllStepsSucceed) {
  ASSERT_EQ(steps_.size(), 6u);
  for (std::size_t i = 0; i < steps_.size(); ++i) EXPECT_EQ(steps_[i], 0) << "step " << i;
  const auto curve = read_file(*dir_ / "curve.csv");
  EXPECT_EQ(curve.rfind("epoch,train_mse,val_mse\n", 0), 0u);
}

TEST_F(CliPipeline, StaticWorldIsEasy) {
  const auto rep = read_json(*dir_ / "eval.json");
  ASSERT_TRUE(rep.contains("oracle"));
  for (const char* section : {"observed", "oracle"})
    for (const char* name : {"model", "hourly_mean"})
      for (double mae : rep[section][name]["mae"].get<std::vector<double>>()) EXPECT_LT(mae, 1.0) << section << name;
  for (double mae : rep["observed"]["hourly_mean"]["mae"].get<std::vector<double>>()) EXPECT_LT(mae, 1e-6);
}

TEST_F(CliPipeline, WindowsSummary) {
  const auto& d = *dir_;
  ASSERT_EQ(run("windows --reports " + (d / "reports.csv") + " --stats " + (d / "stats.json") + " --out-summary " +
                    (d / "windows.json"),
                d / "log2.txt"),
            0);
  const auto j = read_json(d / "windows.json");
  EXPECT_EQ(j["window_seconds"].get<double>(), 900.0);
  EXPECT_EQ(j["segments"].get<std::size_t>(), 24u);
  EXPECT_GT(j["observed_cells"].get<std::size_t>(), 0u);
  EXPECT_EQ(j["skipped_reports"].get<std::size_t>(), 0u);
}

TEST_F(CliPipeline, ForecastWritesEverySegment) {
  const auto& d = *dir_;
  const double at = static_config().start_unix + 30 * 3600.0 + 10.0;
  ASSERT_EQ(run("forecast --model " + (d / "model.ttfc") + " --reports " + (d / "reports.csv") + " --stats " +
                    (d / "stats.json") + " --at " + format_double(at) + " --horizon 3 --out " + (d / "fc.csv"),
                d / "log3.txt"),
            0);
  const auto text = read_file(d / "fc.csv");
  EXPECT_EQ(text.rfind("segment_id,horizon,z,travel_time_s\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 3 * 24);
  // A forecast needs L windows of history before --at.
  EXPECT_EQ(run("forecast --model " + (d / "model.ttfc") + " --reports " + (d / "reports.csv") + " --stats " +
                    (d / "stats.json") + " --at " + format_double(static_config().start_unix + 60.0) +
                    " --out " + (d / "fc2.csv"),
                d / "log3.txt"),
            1);
}

TEST_F(CliPipeline, MismatchedInputsRejected) {
  const auto& d = *dir_;
  save_network(grid3x3(), d / "other.json");
  write_file(d / "tiny_stats.json", fit_stats(ReportLog{{{"t", 0, 10.0, 100.0}}}, 2).to_json().dump());
  EXPECT_EQ(run("train --config " + (d / "train.json") + " --reports " + (d / "reports.csv") + " --stats " +
                    (d / "tiny_stats.json") + " --embeddings " + (d / "emb.csv") + " --out " + (d / "m2") +
                    " --curve " + (d / "c2"),
                d / "log4.txt"),
            1);
  EXPECT_EQ(run("evaluate --model " + (d / "model.ttfc") + " --reports " + (d / "reports.csv") + " --stats " +
                    (d / "tiny_stats.json") + " --out " + (d / "e2"),
                d / "log4.txt"),
            1);
}

TEST(Cli, EtaWithZeroedModelSumsHourlyMeans) {
  TempDir dir;
  const auto net = grid3x3();
  save_network(net, dir / "net.json");
  ReportLog log;
  for (int s = 0; s < 24; ++s)
    for (int hr = 0; hr < 24; ++hr)
      log.reports.push_back({"t", s, 20.0 + s + 2.0 * hr, 86400.0 + hr * 3600.0 + 100.0});
  log.sort();
  const auto stats = fit_stats(log, 24);
  save_stats(stats, dir / "stats.json");
  ModelConfig mc;
  mc.d = 4;
  mc.h = 2;
  mc.N = 1;
  mc.L = 2;
  mc.num_segments = 24;
  auto model = TrafficTransformer::create(mc, 3);
  model.zero_update_paths();
  save_checkpoint(model, dir / "m.ttfc");

  // Two segments forming a path: 0 -> 1 -> 2 along the top row.
  std::vector<SegmentId> path;
  for (const auto& s : net.segments())
    if ((s.from == 0 && s.to == 1) || (s.from == 1 && s.to == 2)) path.push_back(s.id);
  ASSERT_EQ(path.size(), 2u);
  if (net.segment(path[0]).from != 0) std::swap(path[0], path[1]);

  const double depart = 2 * 86400.0 + 8 * 3600.0 + 899.0;
  ASSERT_EQ(run("eta --model " + (dir / "m.ttfc") + " --network " + (dir / "net.json") + " --stats " +
                    (dir / "stats.json") + " --path " + std::to_string(path[0]) + "," + std::to_string(path[1]) +
                    " --depart " + format_double(depart) + " --out " + (dir / "eta.json"),
                dir / "log.txt"),
            0);
  double clock = depart, expected = 0.0;
  for (SegmentId s : path) {
    const double window_start = std::floor(clock / 900.0) * 900.0;
    const double tt = stats.expected(s, window_start);
    expected += tt;
    clock += tt;
  }
  const auto j = read_json(dir / "eta.json");
  EXPECT_NEAR(j["eta_s"].get<double>(), expected, 1e-9);
  EXPECT_NEAR(j["arrive"].get<double>(), depart + expected, 1e-6);
  ASSERT_EQ(j["segments"].size(), 2u);
  EXPECT_EQ(j["segments"][1]["window"].get<std::size_t>(), j["segments"][0]["window"].get<std::size_t>() + 1);

  EXPECT_EQ(run("eta --model " + (dir / "m.ttfc") + " --network " + (dir / "net.json") + " --stats " +
                    (dir / "stats.json") + " --path " + std::to_string(path[1]) + "," + std::to_string(path[0]) +
                    " --depart " + format_double(depart) + " --out " + (dir / "eta2.json"),
                dir / "log.txt"),
            1);
}

TEST(Cli, SynthIsIdempotent) {
  TempDir dir;
  auto cfg = static_config();
  cfg.hours = 12;
  write_file(dir / "c.json", cfg.to_json().dump());
  ASSERT_EQ(run("synth --config " + (dir / "c.json") + " --out " + (dir / "a"), dir / "log"), 0);
  ASSERT_EQ(run("synth --config " + (dir / "c.json") + " --out " + (dir / "b"), dir / "log"), 0);
  ASSERT_EQ(run("synth --config " + (dir / "c.json") + " --seed 99 --out " + (dir / "c"), dir / "log"), 0);
  EXPECT_EQ(read_file(dir / "a/trips.csv"), read_file(dir / "b/trips.csv"));
  EXPECT_EQ(read_file(dir / "a/groundtruth.json"), read_file(dir / "b/groundtruth.json"));
  EXPECT_NE(read_file(dir / "a/trips.csv"), read_file(dir / "c/trips.csv"));
}
