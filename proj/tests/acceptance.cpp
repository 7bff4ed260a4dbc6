// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance checks. Each criterion drives the CLI in-process,
// reads back the report it wrote, and prints one PASS/FAIL line.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packenc/cli.hpp"
#include "packenc/packing.hpp"
#include "packenc/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> body;
};

fs::path g_root;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with output under `out`; returns the exit code.
int cli(std::vector<std::string> args, const fs::path& out) {
  args.insert(args.begin(), {"--out", out.string()});
  std::ostringstream o, e;
  const int code = packenc::cli::run(args, o, e);
  if (code == 2) std::cerr << e.str();
  return code;
}

json load(const fs::path& p) { return json::parse(read_file(p)); }

const json* metric(const json& report, const std::string& name) {
  for (const auto* list : {&report["results"], &report["timing"]["results"]}) {
    for (const auto& m : *list)
      if (m["metric"] == name) return &m;
  }
  return nullptr;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Checks value against an explicit bound, independent of the report's own verdict.
struct Check {
  Outcome out{true, ""};
  void le(const json& r, const std::string& name, double bound) { cmp(r, name, bound, true); }
  void ge(const json& r, const std::string& name, double bound) { cmp(r, name, bound, false); }
  void fail(const std::string& why) {
    out.pass = false;
    add(why);
  }
  void add(const std::string& s) { out.detail += (out.detail.empty() ? "" : "; ") + s; }

 private:
  void cmp(const json& r, const std::string& name, double bound, bool at_most) {
    const json* m = metric(r, name);
    if (!m) return fail(name + " missing");
    const double v = (*m)["value"].get<double>();
    const bool ok = at_most ? v <= bound : v >= bound;
    if (!ok) out.pass = false;
    add(name + "=" + fmt(v) + (at_most ? " <= " : " >= ") + fmt(bound));
  }
};

json verify(const std::string& suite, const fs::path& out) {
  const int code = cli({"verify", "--suite", suite}, out);
  if (code == 2) throw std::runtime_error("verify " + suite + " errored");
  return load(out / "verify" / ("report-" + suite + ".json"));
}

Outcome pack_equivalence() {
  const json r = verify("pack", g_root / "c1");
  Check c;
  c.le(r, "pack.equivalence_max_abs_error", 1e-9);
  c.ge(r, "pack.equivalence_configs", 50);
  for (int n : {1, 2, 4}) c.le(r, "pack.equivalence_max_abs_error.n_layers_" + std::to_string(n), 1e-9);
  return c.out;
}

Outcome attention_two_path() {
  const json r = verify("attention", g_root / "c2");
  Check c;
  c.le(r, "attention.two_path_max_abs_error", 1e-10);
  c.ge(r, "attention.two_path_seeds", 200);
  c.le(r, "attention.softmax_row_sum_max_error", 1e-12);
  c.le(r, "attention.linear_segment_isolation_change", 0);
  c.le(r, "attention.softmax_segment_isolation_change", 0);
  return c.out;
}

Outcome bench_scaling() {
  const fs::path out = g_root / "c3";
  if (cli({"bench-attention"}, out) == 2) throw std::runtime_error("bench-attention errored");
  const json r = load(out / "bench-attention" / "report.json");
  Check c;
  c.le(r, "bench.linear_slope", 1.35);
  c.ge(r, "bench.quadratic_slope", 1.7);
  c.ge(r, "bench.speedup_at_max_length", 4.0);
  return c.out;
}

Outcome aoe_oracle() {
  const json r = verify("aoe", g_root / "c4");
  Check c;
  c.le(r, "aoe.oracle_max_abs_error", 1e-12);
  c.le(r, "aoe.weight_sum_max_error", 1e-12);
  c.le(r, "aoe.flop_violations", 0);
  c.ge(r, "aoe.oracle_seeds", 200);
  return c.out;
}

Outcome gradients() {
  const json r = verify("grad", g_root / "c5");
  Check c;
  c.ge(r, "grad.seeds_per_op", 100);
  std::size_t checked = 0;
  for (const auto& m : r["results"]) {
    const std::string name = m["metric"];
    if (name.size() < 14 || name.compare(name.size() - 14, 14, ".max_rel_error") != 0) continue;
    ++checked;
    const double bound = name.rfind("grad.encoder", 0) == 0 ? 1e-3 : 1e-4;
    if (!(m["value"].get<double>() <= bound)) c.fail(name + "=" + fmt(m["value"].get<double>()));
  }
  if (checked < 16) c.fail("only " + std::to_string(checked) + " gradient checks");
  c.add(std::to_string(checked) + " gradient checks");
  return c.out;
}

Outcome loss_fixtures() {
  const json r = verify("losses", g_root / "c6");
  Check c;
  for (const auto& m : r["results"]) {
    if (!m["pass"].get<bool>()) c.fail(m["metric"].get<std::string>() + " failed");
  }
  c.le(r, "losses.info_nce_identical_error", 1e-12);
  c.le(r, "losses.info_nce_orthogonal_error", 1e-12);
  c.le(r, "losses.info_nce_oracle_max_error", 1e-12);
  c.le(r, "losses.video_additivity_error", 1e-12);
  c.le(r, "losses.distill_endpoint_mismatches", 0);
  c.le(r, "losses.discounted_return_fixture_error", 0);
  return c.out;
}

Outcome train_toy() {
  const fs::path a = g_root / "c7a", b = g_root / "c7b";
  if (cli({"train-toy", "--steps", "200"}, a) == 2) throw std::runtime_error("train-toy errored");
  cli({"train-toy", "--steps", "200"}, b);
  const json r = load(a / "train-toy" / "report.json");
  Check c;
  c.le(r, "train.loss_ratio", 0.5);
  if (read_file(a / "train-toy" / "loss.csv") != read_file(b / "train-toy" / "loss.csv"))
    c.fail("loss.csv differs between runs");
  else
    c.add("loss.csv identical");
  return c.out;
}

std::vector<std::vector<std::size_t>> mask_blocks(const json& r) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& b : r["data"]["batches"]) out.push_back(b["mask_blocks"].get<std::vector<std::size_t>>());
  return out;
}

Outcome packing_fixtures() {
  Check c;
  const fs::path out = g_root / "c8";
  if (cli({"pack-inspect", "--counts", "60,50,40,30", "--capacity", "100"}, out) != 0)
    throw std::runtime_error("pack-inspect errored");
  const auto blocks = mask_blocks(load(out / "pack-inspect" / "report.json"));
  const std::vector<std::vector<std::size_t>> want = {{60, 40}, {50, 30}};
  if (blocks != want) c.fail("ffd blocks differ from [[60,40],[50,30]]");
  else c.add("ffd [[60,40],[50,30]]");

  const std::size_t ids[] = {0, 0, 1};
  const packenc::Tensor m = packenc::packing::build_block_mask(ids);
  const double want_mask[3][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 1}};
  std::size_t bad = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) bad += m.at(i, j) != want_mask[i][j];
  if (bad) c.fail("mask for [0,0,1] has " + std::to_string(bad) + " wrong entries");
  else c.add("mask [0,0,1] exact");
  return c.out;
}

Outcome determinism() {
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
      {"bench-attention", {"bench-attention", "--lengths", "16,32,64", "--repeats", "1", "--warmup", "0"}},
      {"verify", {"verify", "--suite", "all"}},
      {"pack-inspect", {"pack-inspect", "--sizes", "28x28,56x42,14x70"}},
      {"train-toy", {"train-toy", "--steps", "5"}},
  };
  Check c;
  for (const auto& [cmd, args] : runs) {
    std::string text[2], extra[2];
    for (int i = 0; i < 2; ++i) {
      const fs::path out = g_root / ("c9_" + std::to_string(i));
      if (cli(args, out) == 2) throw std::runtime_error(cmd + " errored");
      const fs::path dir = out / cmd;
      const std::string stem = cmd == "verify" ? "report-all" : "report";
      text[i] = packenc::cli::dump_report(packenc::cli::strip_timing(load(dir / (stem + ".json"))));
      if (cmd == "train-toy") extra[i] = read_file(dir / "loss.csv");
    }
    if (text[0] != text[1] || extra[0] != extra[1]) c.fail(cmd + " differs");
    else c.add(cmd + " identical");
  }
  return c.out;
}

}  // namespace

int main(int argc, char** argv) {
  g_root = fs::temp_directory_path() / "packenc_acceptance";
  fs::remove_all(g_root);
  fs::create_directories(g_root);

  const std::vector<Criterion> criteria = {
      {"pack_equivalence", 60, pack_equivalence},
      {"attention_two_path", 10, attention_two_path},
      {"bench_scaling", 300, bench_scaling},
      {"aoe_oracle", 10, aoe_oracle},
      {"gradients", 120, gradients},
      {"loss_fixtures", 10, loss_fixtures},
      {"train_toy", 180, train_toy},
      {"packing_fixtures", 10, packing_fixtures},
      {"determinism", 120, determinism},
  };
  std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (const auto& cr : criteria) {
    if (!only.empty() && cr.name != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.budget_s) {
      o.pass = false;
      o.detail += "; over budget";
    }
    if (!o.pass) ++failures;
    std::printf("%s %-20s %7.2fs (budget %gs)  %s\n", o.pass ? "PASS" : "FAIL", cr.name.c_str(), secs, cr.budget_s,
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(g_root);
  return failures == 0 ? 0 : 1;
}
