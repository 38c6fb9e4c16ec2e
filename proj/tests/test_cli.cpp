#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "pbmr/checkpoint.hpp"
#include "pbmr/cli.hpp"
#include "test_util.hpp"

using namespace pbmr;
using nlohmann::json;
using testutil::read_file;
using testutil::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "pbmr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json load_json(const std::filesystem::path& p) { return json::parse(read_file(p)); }

void make_synth(const std::filesystem::path& dir, std::size_t samples = 24, std::size_t steps = 16) {
  const auto r = run({"synth", "--samples", std::to_string(samples), "--time-steps", std::to_string(steps), "--seed",
                      "7", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
}

} // namespace

TEST(Cli, HelpMatchesGoldenFile) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, read_file(std::filesystem::path(PBMR_GOLDEN_DIR) / "help.txt"));
}

TEST(Cli, HelpListsEveryFlagWithDefaults) {
  const auto r = run({"--help"});
  for (const char* flag : {"--lr", "--batch-size", "--epochs", "--folds", "--optimizer", "--arch", "--loss", "--seed",
                           "--jobs", "--momentum", "--trust-coefficient", "--head-hidden", "--missing-rate",
                           "--checkpoint", "--report", "--channels"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  EXPECT_NE(r.out.find("[0.001]"), std::string::npos);
  EXPECT_NE(r.out.find("[128]"), std::string::npos);
  EXPECT_NE(r.out.find("[1000]"), std::string::npos);
  EXPECT_NE(r.out.find("PBMR_SEED"), std::string::npos);
}

TEST(Cli, VerbHelp) {
  const auto r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--weight-decay"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"fly"}).code, 1);
  const auto r = run({"synth", "--out", "x", "--bogus", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("--help"), std::string::npos);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "o", "--optimizer", "rmsprop"}).code, 1);
  EXPECT_EQ(run({"synth"}).code, 1);
}

TEST(Cli, InvalidInputExitsOneWithMessage) {
  TempDir dir;
  auto r = run({"train", "--data", (dir / "nope").string(), "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  r = run({"synth", "--missing-rate", "1", "--out", (dir / "d").string()});
  EXPECT_EQ(r.code, 1);
  make_synth(dir / "d");
  r = run({"train", "--data", (dir / "d").string(), "--out", (dir / "run").string(), "--lr", "0"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lr"), std::string::npos);
}

TEST(Cli, DivergenceExitsTwo) {
  TempDir dir;
  make_synth(dir / "d", 16, 8);
  const auto r = run({"train", "--data", (dir / "d").string(), "--out", (dir / "run").string(), "--lr", "1e6",
                      "--momentum", "0.99", "--epochs", "20", "--folds", "2", "--batch-size", "4", "--quiet"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("non-finite"), std::string::npos) << r.err;
}

TEST(Cli, SynthWritesDatasetAndReport) {
  TempDir dir;
  make_synth(dir / "d", 10, 12);
  for (const char* f : {"manifest.json", "samples.csv", "targets.csv", "report.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "d" / f)) << f;
  const auto ds = load_dataset_dir(dir / "d");
  EXPECT_EQ(ds.frames.size(), 10u);
  EXPECT_EQ(ds.manifest.time_steps, 12u);
  const auto rep = load_json(dir / "d" / "report.json");
  EXPECT_EQ(rep["config"]["seed"], 7);
  EXPECT_EQ(rep["config"]["sensors"], 7);
  EXPECT_EQ(rep["config"]["missing_rate"], 0.02);
}

TEST(Cli, SeedFallsBackToEnvironment) {
  TempDir dir;
  ::setenv("PBMR_SEED", "11", 1);
  const auto r = run({"synth", "--samples", "3", "--time-steps", "8", "--out", (dir / "d").string()});
  ::unsetenv("PBMR_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_json(dir / "d" / "report.json")["config"]["seed"], 11);
  const auto r2 = run({"synth", "--samples", "3", "--time-steps", "8", "--out", (dir / "e").string()});
  EXPECT_EQ(load_json(dir / "e" / "report.json")["config"]["seed"], 0);
}

TEST(Cli, ConvertReportsFilledCellsAndNormalizedDump) {
  TempDir dir;
  const auto d = dir / "d";
  std::filesystem::create_directories(d);
  testutil::write_file(d / "manifest.json", R"({"version": 1, "time_steps": 4, "target_name": "yield",
    "sensors": [{"name": "a", "min": 0, "max": 100}, {"name": "b", "min": -10, "max": 10}]})");
  testutil::write_file(d / "samples.csv",
                       "sample_id,sensor,t_index,value\n"
                       "x,a,0,10\nx,a,1,\nx,a,2,30\nx,a,3,40\nx,b,0,\nx,b,1,5\nx,b,2,\nx,b,3,-10\n"
                       "y,a,0,0\ny,a,1,100\ny,a,2,50\ny,a,3,50\ny,b,0,1\ny,b,1,2\ny,b,2,3\ny,b,3,4\n");
  auto r = run({"convert", "--data", d.string(), "--out", (dir / "c1").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("filled 3 cells"), std::string::npos) << r.out;
  const auto rep = load_json(dir / "c1" / "report.json");
  EXPECT_EQ(rep["filled_cells"], 3);
  EXPECT_EQ(rep["filled_per_sensor"]["a"], 1);
  EXPECT_EQ(rep["filled_per_sensor"]["b"], 2);

  const auto archive = read_blob_archive(dir / "c1" / "tensors.json", dir / "c1" / "tensors.bin");
  ASSERT_EQ(archive.entries.size(), 2u);
  EXPECT_EQ(archive.entries[0].name, "x");
  EXPECT_EQ(archive.entries[0].shape, (Shape{1, 2, 4}));
  const std::vector<float> x_expect{0.1f, 0.1f, 0.3f, 0.4f, 0.75f, 0.75f, 0.75f, 0.0f};
  EXPECT_EQ(archive.entries[0].values, x_expect);
  for (const auto& e : archive.entries)
    for (float v : e.values) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }

  r = run({"convert", "--data", d.string(), "--out", (dir / "c2").string()});
  ASSERT_EQ(r.code, 0);
  for (const char* f : {"tensors.json", "tensors.bin", "report.json"})
    EXPECT_EQ(read_file(dir / "c1" / f), read_file(dir / "c2" / f)) << f;
}

TEST(Cli, TrainPredictEvalPlot) {
  TempDir dir;
  const auto d = dir / "d", run_dir = dir / "run";
  make_synth(d, 24, 16);
  auto r = run({"train", "--data", d.string(), "--out", run_dir.string(), "--epochs", "3", "--folds", "3",
                "--batch-size", "8", "--seed", "5", "--head-hidden", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fold 2 epoch 3"), std::string::npos);
  for (const char* f : {"report.json", "metrics.csv", "mae.svg", "rmse.svg", "r2.svg", "fold_0.ckpt.json",
                        "fold_0.ckpt.bin", "fold_2.ckpt.json", "fold_2.ckpt.bin"})
    EXPECT_TRUE(std::filesystem::exists(run_dir / f)) << f;
  const auto rep = load_json(run_dir / "report.json");
  EXPECT_EQ(rep["records"].size(), 9u);
  const auto& cfg = rep["config"];
  EXPECT_EQ(cfg["lr"], 1e-3);
  EXPECT_EQ(cfg["optimizer"]["momentum"], 0.9);
  EXPECT_EQ(cfg["optimizer"]["kind"], "sgd");
  EXPECT_EQ(cfg["arch"]["head_hidden"], 16);
  EXPECT_EQ(cfg["loss"], "mse");
  EXPECT_EQ(cfg["seed"], 5);
  EXPECT_TRUE(cfg.contains("jobs"));
  EXPECT_TRUE(rep.contains("baselines"));

  const auto preds = dir / "preds.csv";
  r = run({"predict", "--checkpoint", (run_dir / "fold_0").string(), "--data", d.string(), "--out", preds.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(preds);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,prediction");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 25);
  EXPECT_NE(csv.find("\ns000000,"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(preds.string() + ".report.json"));

  r = run({"eval", "--checkpoint", (run_dir / "fold_0").string(), "--checkpoint", (run_dir / "fold_1").string(),
           "--data", d.string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = load_json(dir / "eval" / "report.json");
  EXPECT_EQ(ev["checkpoints"].size(), 2u);
  EXPECT_GE(ev["summary"]["rmse"].get<double>(), ev["summary"]["mae"].get<double>());

  r = run({"plot", "--report", (run_dir / "report.json").string(), "--report", (run_dir / "report.json").string(),
           "--label", "a", "--label", "b", "--out", (dir / "plots").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(dir / "plots" / "mae.svg").find(">b</text>"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "plots" / "report.json"));
  r = run({"plot", "--report", (run_dir / "report.json").string(), "--label", "a", "--label", "b", "--out",
           (dir / "plots").string()});
  EXPECT_EQ(r.code, 1);

  r = run({"predict", "--checkpoint", (run_dir / "missing").string(), "--data", d.string(), "--out",
           preds.string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, BinaryRunsAndReportsExitCodes) {
  const std::string bin = PBMR_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int status = std::system((bin + " synth --nope 2> /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 1);
}
