// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "packenc/bench.hpp"
#include "packenc/encoder.hpp"
#include "packenc/packing.hpp"
#include "packenc/report.hpp"
#include "packenc/suites.hpp"
#include "packenc/training.hpp"

namespace packenc::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kSeedEnv = "PACKENC_SEED";

struct Common {
  std::uint64_t seed = 1;
  bool seed_from_user = false;
  std::string out = "packenc_out";
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path command_dir(const Common& c, const std::string& command) {
  const fs::path dir = fs::path(c.out) / command;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

int finish(Report& report, const Stopwatch& clock, const fs::path& dir, const std::string& stem, std::ostream& out,
           bool print = true) {
  report.set_wall_seconds(clock.seconds());
  const std::string text = dump_report(report.to_json());
  write_file(dir / (stem + ".json"), text);
  if (print) out << text;
  return report.all_pass() ? kOk : kCheckFailed;
}

// --------------------------------------------------------- bench-attention

struct BenchArgs {
  std::size_t dims = 64;
  std::vector<std::size_t> lengths = {256, 512, 1024, 2048, 4096};
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::string format = "json";
  double max_linear_slope = 1.35;
  double min_quadratic_slope = 1.7;
  double min_speedup = 4.0;
};

int cmd_bench(const Common& c, const BenchArgs& a, std::ostream& out) {
  const Stopwatch clock;
  bench::AttentionBenchOptions opt;
  opt.d_model = a.dims;
  opt.lengths = a.lengths;
  opt.repeats = a.repeats;
  opt.warmup = a.warmup;
  opt.seed = c.seed;
  const auto result = bench::run_attention_bench(opt);
  const fs::path dir = command_dir(c, "bench-attention");
  const std::string csv = bench::samples_csv(result.samples);
  write_file(dir / "samples.csv", csv);

  Report report("bench-attention", c.seed);
  report.config() = {{"dims", a.dims},
                     {"lengths", a.lengths},
                     {"repeats", a.repeats},
                     {"warmup", a.warmup},
                     {"max_linear_slope", a.max_linear_slope},
                     {"min_quadratic_slope", a.min_quadratic_slope},
                     {"min_speedup", a.min_speedup}};
  report.info("bench.samples", static_cast<double>(result.samples.size()), "rows");
  for (const auto* s : {&result.linear, &result.quadratic}) {
    nlohmann::json medians = nlohmann::json::object();
    for (std::size_t i = 0; i < a.lengths.size(); ++i) medians[std::to_string(a.lengths[i])] = s->median_ns[i];
    report.timing_data()["median_ns"][s->op] = medians;
  }
  report.at_most("bench.linear_slope", result.linear.slope, "loglog", a.max_linear_slope, true);
  report.at_least("bench.quadratic_slope", result.quadratic.slope, "loglog", a.min_quadratic_slope, true);
  report.at_least("bench.speedup_at_max_length", result.speedup_at_max, "ratio", a.min_speedup, true);
  const int code = finish(report, clock, dir, "report", out, a.format == "json");
  if (a.format == "csv") out << csv;
  return code;
}

// ------------------------------------------------------------------ verify

struct VerifyArgs {
  std::string suite = "all";
  double tol_scale = 1.0;
  bool parallel = false;
};

int cmd_verify(const Common& c, const VerifyArgs& a, std::ostream& out) {
  const Stopwatch clock;
  Report report("verify", c.seed, a.tol_scale);
  report.config() = {{"suite", a.suite}, {"parallel", a.parallel}};
  run_suite(a.suite, report, {c.seed, a.parallel});
  return finish(report, clock, command_dir(c, "verify"), "report-" + a.suite, out);
}

// ------------------------------------------------------------ pack-inspect

struct PackArgs {
  std::vector<std::string> sizes;
  std::vector<std::size_t> counts;
  std::size_t capacity = 256;
  std::size_t patch = 14;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  std::size_t w = 0, h = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    w = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    h = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw std::invalid_argument("pack-inspect: size '" + s + "' is not WIDTHxHEIGHT");
  }
  if (w == 0 || h == 0) throw std::invalid_argument("pack-inspect: size '" + s + "' has a zero dimension");
  return {w, h};
}

// Diagonal block lengths read off the mask itself.
std::vector<std::size_t> mask_blocks(const Tensor& mask) {
  std::vector<std::size_t> blocks;
  const std::size_t n = mask.rows();
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && mask.at(i, j) == 1.0) ++j;
    blocks.push_back(j - i);
    i = j;
  }
  return blocks;
}

int cmd_pack_inspect(const Common& c, const PackArgs& a, std::ostream& out) {
  const Stopwatch clock;
  if (a.sizes.empty() == a.counts.empty()) {
    throw std::invalid_argument("pack-inspect: give exactly one of --sizes or --counts");
  }
  if (a.patch == 0) throw std::invalid_argument("pack-inspect: --patch must be positive");
  std::vector<packing::PatchedImage> images;
  if (!a.sizes.empty()) {
    for (std::size_t i = 0; i < a.sizes.size(); ++i) {
      const auto [w, h] = parse_size(a.sizes[i]);
      images.push_back({i, w, h, Tensor::zeros({packing::patch_token_count(w, h, a.patch), 2})});
    }
  } else {
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
      if (a.counts[i] < 2) throw std::invalid_argument("pack-inspect: counts include the size token, so must be >= 2");
      images.push_back({i, a.counts[i] - 1, 1, Tensor::zeros({a.counts[i] - 1, 2})});
    }
  }
  const auto batches = packing::greedy_pack(images, a.capacity);

  Report report("pack-inspect", c.seed);
  report.config() = {{"sizes", a.sizes}, {"counts", a.counts}, {"capacity", a.capacity}, {"patch", a.patch}};
  nlohmann::json manifests = nlohmann::json::array();
  for (std::size_t b = 0; b < batches.size(); ++b) {
    nlohmann::json m = batches[b].manifest(b);
    m["mask_blocks"] = mask_blocks(batches[b].block_mask);
    manifests.push_back(std::move(m));
  }
  report.data()["batches"] = manifests;
  report.info("pack.batches", static_cast<double>(batches.size()), "count");
  report.info("pack.utilization", packing::utilization(batches), "fraction");
  const fs::path dir = command_dir(c, "pack-inspect");
  write_file(dir / "manifest.json", dump_report(manifests));
  return finish(report, clock, dir, "report", out);
}

// --------------------------------------------------------------- train-toy

struct TrainArgs {
  std::size_t steps = 200;
  std::string config;
  std::size_t pairs = 8;
  double max_loss_ratio = 0.5;
  std::size_t min_steps_for_check = 200;
  double temperature = 0.07;
  double lr = 2e-5;
  double scale_min = 0.5;
  double scale_max = 1.5;
  std::size_t batch_size = 256;
};

std::string format_loss(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

int cmd_train_toy(const Common& c, const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  const Stopwatch clock;
  encoder::EncoderConfig cfg;
  if (!a.config.empty()) {
    std::ifstream f(a.config);
    if (!f) throw std::runtime_error("train-toy: cannot read config " + a.config);
    cfg = encoder::EncoderConfig::from_json(nlohmann::json::parse(f));
  }
  if (sub.count("--temperature")) cfg.temperature = a.temperature;
  if (sub.count("--lr")) cfg.lr = a.lr;
  if (sub.count("--scale-min")) cfg.scale_range.lo = a.scale_min;
  if (sub.count("--scale-max")) cfg.scale_range.hi = a.scale_max;
  if (sub.count("--batch-size")) cfg.batch_size = a.batch_size;
  if (c.seed_from_user || a.config.empty()) cfg.seed = c.seed;
  cfg.validate();
  if (a.pairs < 2 || a.pairs > cfg.batch_size) {
    throw std::invalid_argument("train-toy: --pairs must lie in [2, batch_size]");
  }

  const fs::path dir = command_dir(c, "train-toy");
  encoder::LayerStack stack = encoder::LayerStack::init(cfg);
  const auto pairs = train::make_toy_pairs(cfg.seed + 1000, a.pairs, cfg.scale_range);
  train::AdamW opt(cfg.lr);
  std::string csv = "step,loss\n";
  std::vector<double> curve;
  for (std::size_t s = 0; s < a.steps; ++s) {
    curve.push_back(train::contrastive_train_step(stack, opt, pairs, cfg));
    csv += std::to_string(s + 1) + "," + format_loss(curve.back()) + "\n";
  }
  const double final_loss = train::evaluate_contrastive_loss(stack, pairs, cfg);
  csv += std::to_string(a.steps + 1) + "," + format_loss(final_loss) + "\n";
  write_file(dir / "loss.csv", csv);
  stack.save(dir / "weights");
  write_file(dir / "config.json", dump_report(cfg.to_json()));

  Report report("train-toy", c.seed);
  report.config() = cfg.to_json();
  report.config()["steps"] = a.steps;
  report.config()["pairs"] = a.pairs;
  report.info("train.parameters", static_cast<double>(stack.parameter_count()), "count");
  report.info("train.final_loss", final_loss, "nats");
  if (!curve.empty()) {
    report.info("train.step1_loss", curve.front(), "nats");
    const double ratio = final_loss / curve.front();
    if (a.steps >= a.min_steps_for_check) {
      report.at_most("train.loss_ratio", ratio, "ratio", a.max_loss_ratio);
    } else {
      report.info("train.loss_ratio", ratio, "ratio");
    }
  }
  return finish(report, clock, dir, "report", out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"packenc: packed-image encoder kernels, oracles and benchmarks", "packenc"};
  app.require_subcommand(1);
  Common common;
  if (const char* env = std::getenv(kSeedEnv)) {
    try {
      common.seed = std::stoull(env);
      common.seed_from_user = true;
    } catch (const std::exception&) {
      err << "packenc: " << kSeedEnv << "='" << env << "' is not an unsigned integer\n";
      return kError;
    }
  }
  auto* seed_opt = app.add_option("--seed", common.seed, std::string("RNG seed (default from ") + kSeedEnv + ")")
                       ->capture_default_str();
  app.add_option("--out", common.out, "Root directory for every file output")->capture_default_str();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench-attention", "Time the linear path against the quadratic oracle");
  bench->add_option("--dims", bench_args.dims, "Feature dimension d")->capture_default_str();
  bench->add_option("--lengths", bench_args.lengths, "Sequence lengths, ascending, at least 3")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--repeats", bench_args.repeats, "Timed runs per point (median reported)")->capture_default_str();
  bench->add_option("--warmup", bench_args.warmup, "Untimed runs per point")->capture_default_str();
  bench->add_option("--format", bench_args.format, "stdout format")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  bench->add_option("--max-linear-slope", bench_args.max_linear_slope)->capture_default_str();
  bench->add_option("--min-quadratic-slope", bench_args.min_quadratic_slope)->capture_default_str();
  bench->add_option("--min-speedup", bench_args.min_speedup, "Required quadratic/linear time at the largest L")
      ->capture_default_str();

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Run an invariant suite against its oracles");
  std::vector<std::string> suites = suite_names();
  suites.push_back("all");
  verify->add_option("--suite", verify_args.suite, "Suite to run")->check(CLI::IsMember(suites))->capture_default_str();
  verify->add_option("--tol-scale", verify_args.tol_scale, "Multiplier applied to every tolerance")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  verify->add_flag("--parallel", verify_args.parallel, "Run suite items on worker threads");

  PackArgs pack_args;
  auto* pack = app.add_subcommand("pack-inspect", "Show first-fit-decreasing batches and block masks");
  pack->add_option("--sizes", pack_args.sizes, "Image sizes WIDTHxHEIGHT")->delimiter(',');
  pack->add_option("--counts", pack_args.counts, "Raw token counts including the size token")->delimiter(',');
  pack->add_option("--capacity", pack_args.capacity, "Tokens per batch")->capture_default_str();
  pack->add_option("--patch", pack_args.patch, "Patch size in pixels")->capture_default_str();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train-toy", "Contrastive training on procedurally generated pairs");
  train->add_option("--steps", train_args.steps, "Optimizer steps")->capture_default_str();
  train->add_option("--config", train_args.config, "EncoderConfig JSON file (all keys optional)");
  train->add_option("--pairs", train_args.pairs, "Image/scaled-image pairs in the fixture")->capture_default_str();
  train->add_option("--max-loss-ratio", train_args.max_loss_ratio, "Final / step-1 loss bound")->capture_default_str();
  train->add_option("--min-steps-for-check", train_args.min_steps_for_check,
                    "Runs shorter than this report the ratio without checking it")
      ->capture_default_str();
  train->add_option("--temperature", train_args.temperature, "Contrastive temperature tau")->capture_default_str();
  train->add_option("--lr", train_args.lr, "AdamW learning rate")->capture_default_str();
  train->add_option("--scale-min", train_args.scale_min, "Lower random-scale factor")->capture_default_str();
  train->add_option("--scale-max", train_args.scale_max, "Upper random-scale factor")->capture_default_str();
  train->add_option("--batch-size", train_args.batch_size, "Upper bound on --pairs")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "packenc: " << e.what() << "\n";
    return kError;
  }
  if (seed_opt->count() > 0) common.seed_from_user = true;

  try {
    if (*bench) return cmd_bench(common, bench_args, out);
    if (*verify) return cmd_verify(common, verify_args, out);
    if (*pack) return cmd_pack_inspect(common, pack_args, out);
    if (*train) return cmd_train_toy(common, train_args, *train, out);
  } catch (const std::exception& e) {
    err << "packenc: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

}  // namespace packenc::cli
