// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace packenc::bench {

struct AttentionBenchOptions {
  std::size_t d_model = 64;
  std::vector<std::size_t> lengths = {256, 512, 1024, 2048, 4096};
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::uint64_t seed = 1;
};

struct Sample {
  std::string op;  // "linear" or "quadratic"
  std::size_t length = 0;
  std::size_t d_model = 0;
  std::size_t repeat = 0;
  std::int64_t wall_ns = 0;
};

struct OpSummary {
  std::string op;
  std::vector<double> median_ns;  // one per length
  double slope = 0.0;             // least-squares fit of log(time) on log(L)
};

struct AttentionBenchResult {
  AttentionBenchOptions options;
  std::vector<Sample> samples;
  OpSummary linear, quadratic;
  /// quadratic / linear median time at the largest length.
  double speedup_at_max = 0.0;
};

/// Times linear_attention and linear_attention_quadratic_oracle on the same
/// random inputs at each length, single-threaded, after `warmup` untimed runs.
/// Throws std::invalid_argument for fewer than 3 lengths, unsorted lengths,
/// or zero repeats.
AttentionBenchResult run_attention_bench(const AttentionBenchOptions& options);

double median(std::vector<double> values);

/// Least-squares slope of log(y) on log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// op,L,d,repeat,wall_ns rows with a header.
std::string samples_csv(std::span<const Sample> samples);

}  // namespace packenc::bench
