// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "packenc/tensor.hpp"

namespace packenc {

/// xoshiro256** seeded through splitmix64. Output is fully specified by the
/// seed, independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal() noexcept;
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  Tensor uniform_tensor(Shape shape, double lo, double hi);
  Tensor normal_tensor(Shape shape, double stddev);
  /// Rows drawn from a normal distribution and rescaled to unit length.
  Tensor unit_rows(std::size_t n, std::size_t d);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace packenc
