// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "packenc/bench.hpp"
#include "packenc/cli.hpp"
#include "packenc/encoder.hpp"
#include "packenc/report.hpp"
#include "test_util.hpp"

namespace packenc::cli {
namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

CliRun run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const nlohmann::json* find_metric(const nlohmann::json& report, const std::string& name) {
  for (const auto* section : {&report["results"], &report["timing"]["results"]})
    for (const auto& m : *section)
      if (m["metric"] == name) return &m;
  return nullptr;
}

TEST(Report, ChecksAndScaling) {
  Report r("demo", 4, 2.0);
  EXPECT_TRUE(r.at_most("a", 1.5, "abs", 1.0).pass);
  EXPECT_FALSE(r.at_most("b", 2.5, "abs", 1.0).pass);
  EXPECT_TRUE(r.at_least("c", 3.0, "x", 3.0).pass);
  EXPECT_TRUE(r.exact("d", 0.0).pass);
  EXPECT_FALSE(r.exact("e", 1.0).pass);
  EXPECT_TRUE(r.info("f", 123.0, "count").pass);
  EXPECT_FALSE(r.all_pass());
  ASSERT_TRUE(r.find("a").has_value());
  EXPECT_EQ(r.find("a")->tolerance, 2.0);
  EXPECT_FALSE(r.find("zz").has_value());

  Report zero("demo", 4, 0.0);
  EXPECT_FALSE(zero.at_most("tiny", 0.0, "abs", 1e-12).pass);
  EXPECT_TRUE(zero.exact("count", 0.0).pass);
}

TEST(Report, TimingSeparatedAndKeysSorted) {
  Report r("demo", 1);
  r.at_most("det", 0.1, "abs", 1.0);
  r.at_least("slow", 1.0, "ratio", 2.0, true);
  r.set_wall_seconds(3.5);
  EXPECT_TRUE(r.deterministic_pass());
  EXPECT_FALSE(r.all_pass());
  const auto j = r.to_json();
  EXPECT_EQ(j["results"].size(), 1u);
  EXPECT_EQ(j["timing"]["results"].size(), 1u);
  EXPECT_EQ(j["timing"]["wall_seconds"], 3.5);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_FALSE(j["timing"]["pass"].get<bool>());
  const auto stripped = strip_timing(j);
  EXPECT_FALSE(stripped.contains("timing"));
  const std::string text = dump_report(j);
  EXPECT_EQ(text.back(), '\n');
  EXPECT_LT(text.find("\"command\""), text.find("\"config\""));
  EXPECT_LT(text.find("\"config\""), text.find("\"seed\""));
}

TEST(Report, MergeKeepsOrder) {
  Report a("x", 1), b("x", 1);
  a.info("one", 1, "n");
  b.info("two", 2, "n");
  b.exact("three", 0.0);
  a.merge(b);
  ASSERT_EQ(a.metrics().size(), 3u);
  EXPECT_EQ(a.metrics()[2].name, "three");
}

TEST(Bench, MedianAndSlope) {
  EXPECT_EQ(bench::median({3.0}), 3.0);
  EXPECT_EQ(bench::median({5.0, 1.0, 3.0}), 3.0);
  EXPECT_EQ(bench::median({4.0, 1.0, 3.0, 2.0}), 2.5);
  const std::vector<double> x = {1, 2, 4, 8}, y = {3, 12, 48, 192};
  EXPECT_NEAR(bench::loglog_slope(x, y), 2.0, 1e-12);
  EXPECT_THROW(bench::loglog_slope(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Bench, OptionErrors) {
  bench::AttentionBenchOptions o;
  o.lengths = {8, 16};
  EXPECT_THROW(bench::run_attention_bench(o), std::invalid_argument);
  o.lengths = {8, 32, 16};
  EXPECT_THROW(bench::run_attention_bench(o), std::invalid_argument);
  o.lengths = {8, 16, 32};
  o.repeats = 0;
  EXPECT_THROW(bench::run_attention_bench(o), std::invalid_argument);
}

TEST(Cli, HelpListsPublishedDefaults) {
  const CliRun top = run_cli({"--help"});
  EXPECT_EQ(top.code, kOk);
  for (const char* cmd : {"bench-attention", "verify", "pack-inspect", "train-toy"})
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
  const CliRun train = run_cli({"train-toy", "--help"});
  EXPECT_EQ(train.code, kOk);
  for (const char* v : {"0.07", "2e-05", "256", "0.5", "1.5"}) EXPECT_NE(train.out.find(v), std::string::npos) << v;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, kError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kError);
  EXPECT_EQ(run_cli({"verify", "--suite", "nope"}).code, kError);
  EXPECT_EQ(run_cli({"verify", "--tol-scale", "-1"}).code, kError);
  EXPECT_EQ(run_cli({"bench-attention", "--format", "xml"}).code, kError);
}

TEST(Cli, BenchAttentionSmall) {
  test::TempDir dir("cli_bench");
  const CliRun r = run_cli({"--out", dir.path().string(), "bench-attention", "--lengths", "16,32,64", "--dims", "8",
                         "--repeats", "1", "--warmup", "0", "--min-speedup", "0", "--max-linear-slope", "100",
                         "--min-quadratic-slope", "-100"});
  EXPECT_EQ(r.code, kOk) << r.err;
  const std::string csv = read_file(dir.path() / "bench-attention" / "samples.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);
  EXPECT_EQ(csv.rfind("op,L,d,repeat,wall_ns\n", 0), 0u);
  const auto j = r.json();
  ASSERT_NE(find_metric(j, "bench.linear_slope"), nullptr);
  ASSERT_NE(find_metric(j, "bench.quadratic_slope"), nullptr);
  // With one repeat the median is the sample itself.
  const auto medians = j["timing"]["median_ns"]["linear"];
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  std::getline(rows, line);
  EXPECT_EQ(line.substr(0, line.find(',')), "linear");
  const double first = std::stod(line.substr(line.rfind(',') + 1));
  EXPECT_EQ(medians["16"].get<double>(), first);

  EXPECT_EQ(run_cli({"--out", dir.path().string(), "bench-attention", "--lengths", "16,32"}).code, kError);
  const CliRun csv_out = run_cli({"--out", dir.path().string(), "bench-attention", "--lengths", "16,32,64", "--dims",
                               "4", "--repeats", "1", "--format", "csv", "--min-speedup", "0",
                               "--max-linear-slope", "100", "--min-quadratic-slope", "-100"});
  EXPECT_EQ(csv_out.out.rfind("op,L,d,repeat,wall_ns\n", 0), 0u);
}

TEST(Cli, VerifyPackPassesAndToleranceTamperFails) {
  test::TempDir dir("cli_verify");
  const CliRun ok = run_cli({"--out", dir.path().string(), "--seed", "1", "verify", "--suite", "pack"});
  EXPECT_EQ(ok.code, kOk) << ok.out;
  const auto j = ok.json();
  EXPECT_TRUE(j["pass"].get<bool>());
  for (const char* depth : {"1", "2", "4"}) {
    EXPECT_NE(find_metric(j, std::string("pack.equivalence_max_abs_error.n_layers_") + depth), nullptr);
  }
  EXPECT_LE(find_metric(j, "pack.equivalence_max_abs_error")->at("value").get<double>(), 1e-9);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "verify" / "report-pack.json"));

  const CliRun tampered = run_cli({"--out", dir.path().string(), "verify", "--suite", "pack", "--tol-scale", "0"});
  EXPECT_EQ(tampered.code, kCheckFailed);
  EXPECT_FALSE(tampered.json()["pass"].get<bool>());
}

TEST(Cli, VerifyParallelMatchesSequential) {
  test::TempDir dir("cli_parallel");
  const CliRun a = run_cli({"--out", dir.path().string(), "verify", "--suite", "losses"});
  const CliRun b = run_cli({"--out", dir.path().string(), "verify", "--suite", "losses", "--parallel"});
  ASSERT_EQ(a.code, kOk);
  ASSERT_EQ(b.code, kOk);
  auto ja = strip_timing(a.json()), jb = strip_timing(b.json());
  ja["config"].erase("parallel");
  jb["config"].erase("parallel");
  EXPECT_EQ(ja, jb);
}

TEST(Cli, SeedFromEnvironment) {
  test::TempDir dir("cli_env");
  ::setenv("PACKENC_SEED", "17", 1);
  const CliRun env = run_cli({"--out", dir.path().string(), "pack-inspect", "--counts", "3,4"});
  const CliRun flag = run_cli({"--out", dir.path().string(), "--seed", "5", "pack-inspect", "--counts", "3,4"});
  ::setenv("PACKENC_SEED", "x", 1);
  const CliRun bad = run_cli({"pack-inspect", "--counts", "3,4"});
  ::unsetenv("PACKENC_SEED");
  EXPECT_EQ(env.json()["seed"], 17);
  EXPECT_EQ(flag.json()["seed"], 5);
  EXPECT_EQ(bad.code, kError);
}

TEST(Cli, PackInspectFixtures) {
  test::TempDir dir("cli_pack");
  const std::string out = dir.path().string();
  // 28x42 at patch 14 is 2x3 = 6 patches plus the size token.
  const CliRun one = run_cli({"--out", out, "pack-inspect", "--sizes", "28x42", "--capacity", "16"});
  ASSERT_EQ(one.code, kOk) << one.err;
  const auto batches = one.json()["data"]["batches"];
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_DOUBLE_EQ(batches[0]["utilization"].get<double>(), 7.0 / 16.0);
  EXPECT_EQ(batches[0]["mask_blocks"], nlohmann::json::array({7}));

  // Patch 1: a WxH image has W*H patches, so counts 60,50,40,30 need 59,49,39,29 patches.
  const CliRun ffd = run_cli({"--out", out, "pack-inspect", "--sizes", "59x1,49x1,39x1,29x1", "--patch", "1",
                           "--capacity", "100"});
  ASSERT_EQ(ffd.code, kOk) << ffd.err;
  const auto b = ffd.json()["data"]["batches"];
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0]["mask_blocks"], nlohmann::json::array({60, 40}));
  EXPECT_EQ(b[1]["mask_blocks"], nlohmann::json::array({50, 30}));
  const auto manifest = nlohmann::json::parse(read_file(dir.path() / "pack-inspect" / "manifest.json"));
  EXPECT_EQ(manifest, b);

  const CliRun counts = run_cli({"--out", out, "pack-inspect", "--counts", "60,50,40,30", "--capacity", "100"});
  const auto cb = counts.json()["data"]["batches"];
  ASSERT_EQ(cb.size(), 2u);
  EXPECT_EQ(cb[0]["mask_blocks"], nlohmann::json::array({60, 40}));
  EXPECT_EQ(cb[1]["mask_blocks"], nlohmann::json::array({50, 30}));

  const CliRun big = run_cli({"--out", out, "pack-inspect", "--sizes", "100x100", "--capacity", "64"});
  EXPECT_EQ(big.code, kError);
  EXPECT_NE(big.err.find("65"), std::string::npos) << big.err;

  EXPECT_EQ(run_cli({"--out", out, "pack-inspect", "--sizes", "10y10"}).code, kError);
  EXPECT_EQ(run_cli({"--out", out, "pack-inspect"}).code, kError);
}

TEST(Cli, TrainToyStepsZeroPersistsInitialWeights) {
  test::TempDir dir("cli_train0");
  const CliRun r = run_cli({"--out", dir.path().string(), "--seed", "3", "train-toy", "--steps", "0"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto cfg = encoder::EncoderConfig::from_json(
      nlohmann::json::parse(read_file(dir.path() / "train-toy" / "config.json")));
  EXPECT_EQ(cfg.seed, 3u);
  const auto loaded = encoder::LayerStack::load(dir.path() / "train-toy" / "weights", cfg);
  const auto fresh = encoder::LayerStack::init(cfg);
  const auto a = loaded.named_tensors(), b = fresh.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tensor, b[i].tensor) << a[i].name;
  const std::string csv = read_file(dir.path() / "train-toy" / "loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Cli, TrainToyConfigAndOverrides) {
  test::TempDir dir("cli_train_cfg");
  const auto cfg_path = dir.path() / "cfg.json";
  std::ofstream(cfg_path) << R"({"d_model": 8, "seed": 11, "aoe": {"d_ffn": 8}, "temperature": 0.2})";
  const CliRun r = run_cli({"--out", dir.path().string(), "train-toy", "--steps", "3", "--config", cfg_path.string(),
                         "--lr", "0.001"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto c = r.json()["config"];
  EXPECT_EQ(c["d_model"], 8);
  EXPECT_EQ(c["seed"], 11);
  EXPECT_EQ(c["temperature"], 0.2);
  EXPECT_EQ(c["lr"], 0.001);
  EXPECT_EQ(c["batch_size"], 256);

  const CliRun seeded = run_cli({"--out", dir.path().string(), "--seed", "4", "train-toy", "--steps", "1", "--config",
                              cfg_path.string()});
  EXPECT_EQ(seeded.json()["config"]["seed"], 4);

  std::ofstream(cfg_path) << R"({"d_model": 8, "unknown": 1})";
  EXPECT_EQ(run_cli({"--out", dir.path().string(), "train-toy", "--config", cfg_path.string()}).code, kError);
  EXPECT_EQ(run_cli({"--out", dir.path().string(), "train-toy", "--pairs", "1"}).code, kError);
}

TEST(Cli, UnwritableOutputDirectory) {
  test::TempDir dir("cli_unwritable");
  std::ofstream(dir.path() / "file") << "x";
  const CliRun r = run_cli({"--out", (dir.path() / "file").string(), "train-toy", "--steps", "0"});
  EXPECT_EQ(r.code, kError);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, TrainToyRerunIsBitIdentical) {
  test::TempDir dir("cli_train_rerun");
  const std::vector<std::string> args = {"--out", dir.path().string(), "train-toy", "--steps", "5", "--pairs", "4"};
  const CliRun a = run_cli(args);
  const std::string csv_a = read_file(dir.path() / "train-toy" / "loss.csv");
  const CliRun b = run_cli(args);
  const std::string csv_b = read_file(dir.path() / "train-toy" / "loss.csv");
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_EQ(dump_report(strip_timing(a.json())), dump_report(strip_timing(b.json())));
}

}  // namespace
}  // namespace packenc::cli
