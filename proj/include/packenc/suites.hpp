// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "packenc/encoder.hpp"
#include "packenc/report.hpp"
#include "packenc/rng.hpp"

namespace packenc::cli {

struct SuiteOptions {
  std::uint64_t seed = 1;
  bool parallel = false;
};

/// pack, attention, aoe, grad, losses; "all" runs each in that order.
const std::vector<std::string>& suite_names();

/// Appends the suite's checks to `report`. Throws std::invalid_argument for an
/// unknown suite name.
void run_suite(const std::string& name, Report& report, const SuiteOptions& options);

/// A random encoder configuration for pack-equivalence checks, with images of
/// pairwise distinct sizes.
struct PackCase {
  encoder::EncoderConfig config;
  std::vector<encoder::ImageGrid> images;
};
PackCase random_pack_case(Rng& rng, std::size_t n_layers, std::size_t d_model);

/// Largest |packed - alone| over all images of the case.
double pack_equivalence_error(const PackCase& c);

}  // namespace packenc::cli
