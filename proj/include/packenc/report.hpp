// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace packenc::cli {

enum class Check {
  kAtMost,   // value <= tolerance * tol_scale
  kAtLeast,  // value >= bound
  kExact,    // value == 0 (a mismatch count or exact difference)
  kInfo,     // recorded, always passes
};

struct Metric {
  std::string name;
  double value = 0.0;
  std::string unit;
  Check check = Check::kInfo;
  double tolerance = 0.0;  // after scaling
  bool pass = true;
  bool timing = false;  // depends on wall-clock measurements

  nlohmann::json to_json() const;
};

/// Structured command output. Metrics derived from wall-clock time live under
/// the "timing" key so the rest of the report is reproducible byte for byte.
class Report {
 public:
  Report(std::string command, std::uint64_t seed, double tol_scale = 1.0);

  /// Multiplies every kAtMost tolerance. A check whose nominal tolerance is
  /// positive but scales to zero never passes.
  double tol_scale() const noexcept { return tol_scale_; }

  const Metric& at_most(const std::string& name, double value, const std::string& unit, double tolerance,
                        bool timing = false);
  const Metric& at_least(const std::string& name, double value, const std::string& unit, double bound,
                         bool timing = false);
  const Metric& exact(const std::string& name, double value, const std::string& unit = "count");
  const Metric& info(const std::string& name, double value, const std::string& unit, bool timing = false);

  /// Appends another report's metrics (used to merge suite items in order).
  void merge(const Report& other);

  const std::vector<Metric>& metrics() const noexcept { return metrics_; }
  std::optional<Metric> find(const std::string& name) const;

  nlohmann::json& config() noexcept { return config_; }
  nlohmann::json& data() noexcept { return data_; }
  nlohmann::json& timing_data() noexcept { return timing_data_; }
  void set_wall_seconds(double s) { wall_seconds_ = s; }

  /// Every non-timing metric passes.
  bool deterministic_pass() const;
  /// Every metric passes; the process exit code is 0 iff this holds.
  bool all_pass() const;

  nlohmann::json to_json() const;

 private:
  const Metric& push(Metric m);

  std::string command_;
  std::uint64_t seed_;
  double tol_scale_;
  std::vector<Metric> metrics_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json data_ = nlohmann::json::object();
  nlohmann::json timing_data_ = nlohmann::json::object();
  double wall_seconds_ = 0.0;
};

/// Report JSON with the "timing" subtree removed.
nlohmann::json strip_timing(nlohmann::json report);

/// Pretty-printed, key-sorted JSON followed by a newline.
std::string dump_report(const nlohmann::json& j);

}  // namespace packenc::cli
