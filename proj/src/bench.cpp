// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "packenc/attention.hpp"
#include "packenc/rng.hpp"

namespace packenc::bench {

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw std::invalid_argument("loglog_slope: x values are all equal");
  return sxy / sxx;
}

namespace {

volatile double g_sink = 0.0;

std::int64_t time_once(const std::function<Tensor()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor out = fn();
  const auto t1 = std::chrono::steady_clock::now();
  g_sink = g_sink + out[0];
  return std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
}

}  // namespace

AttentionBenchResult run_attention_bench(const AttentionBenchOptions& options) {
  if (options.lengths.size() < 3) throw std::invalid_argument("bench-attention: need at least 3 lengths for a slope fit");
  if (!std::is_sorted(options.lengths.begin(), options.lengths.end()) ||
      std::adjacent_find(options.lengths.begin(), options.lengths.end()) != options.lengths.end()) {
    throw std::invalid_argument("bench-attention: lengths must be strictly ascending");
  }
  if (options.lengths.front() == 0 || options.d_model == 0) {
    throw std::invalid_argument("bench-attention: lengths and d must be positive");
  }
  if (options.repeats == 0) throw std::invalid_argument("bench-attention: repeats must be >= 1");

  AttentionBenchResult result;
  result.options = options;
  result.linear.op = "linear";
  result.quadratic.op = "quadratic";
  Rng rng(options.seed);
  const std::size_t d = options.d_model;
  for (std::size_t length : options.lengths) {
    const Tensor q = rng.normal_tensor({length, d}, 1.0);
    const Tensor k = rng.normal_tensor({length, d}, 1.0);
    const Tensor v = rng.normal_tensor({length, d}, 1.0);
    const std::pair<OpSummary*, std::function<Tensor()>> ops[] = {
        {&result.linear, [&] { return attention::linear_attention(q, k, v); }},
        {&result.quadratic, [&] { return attention::linear_attention_quadratic_oracle(q, k, v); }},
    };
    for (const auto& [summary, fn] : ops) {
      for (std::size_t w = 0; w < options.warmup; ++w) time_once(fn);
      std::vector<double> times;
      for (std::size_t rep = 0; rep < options.repeats; ++rep) {
        const std::int64_t ns = time_once(fn);
        times.push_back(static_cast<double>(ns));
        result.samples.push_back({summary->op, length, d, rep, ns});
      }
      summary->median_ns.push_back(median(times));
    }
  }
  std::vector<double> xs(options.lengths.begin(), options.lengths.end());
  result.linear.slope = loglog_slope(xs, result.linear.median_ns);
  result.quadratic.slope = loglog_slope(xs, result.quadratic.median_ns);
  result.speedup_at_max = result.quadratic.median_ns.back() / result.linear.median_ns.back();
  return result;
}

std::string samples_csv(std::span<const Sample> samples) {
  std::ostringstream out;
  out << "op,L,d,repeat,wall_ns\n";
  for (const auto& s : samples) out << s.op << ',' << s.length << ',' << s.d_model << ',' << s.repeat << ',' << s.wall_ns << '\n';
  return out.str();
}

}  // namespace packenc::bench
