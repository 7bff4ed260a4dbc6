// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/report.hpp"

#include <cmath>
#include <stdexcept>

namespace packenc::cli {

namespace {

const char* check_name(Check c) {
  switch (c) {
    case Check::kAtMost:
      return "<=";
    case Check::kAtLeast:
      return ">=";
    case Check::kExact:
      return "==";
    case Check::kInfo:
      break;
  }
  return "info";
}

}  // namespace

nlohmann::json Metric::to_json() const {
  nlohmann::json j{{"metric", name}, {"value", value}, {"unit", unit}, {"check", check_name(check)}, {"pass", pass}};
  if (check != Check::kInfo) j["tolerance"] = tolerance;
  return j;
}

Report::Report(std::string command, std::uint64_t seed, double tol_scale)
    : command_(std::move(command)), seed_(seed), tol_scale_(tol_scale) {
  if (!(tol_scale >= 0.0) || !std::isfinite(tol_scale)) {
    throw std::invalid_argument("Report: tolerance scale must be finite and non-negative");
  }
}

const Metric& Report::push(Metric m) {
  metrics_.push_back(std::move(m));
  return metrics_.back();
}

const Metric& Report::at_most(const std::string& name, double value, const std::string& unit, double tolerance,
                              bool timing) {
  const double scaled = tolerance * tol_scale_;
  const bool pass = std::isfinite(value) && value <= scaled && !(scaled == 0.0 && tolerance > 0.0);
  return push({name, value, unit, Check::kAtMost, scaled, pass, timing});
}

const Metric& Report::at_least(const std::string& name, double value, const std::string& unit, double bound,
                               bool timing) {
  return push({name, value, unit, Check::kAtLeast, bound, std::isfinite(value) && value >= bound, timing});
}

const Metric& Report::exact(const std::string& name, double value, const std::string& unit) {
  return push({name, value, unit, Check::kExact, 0.0, value == 0.0, false});
}

const Metric& Report::info(const std::string& name, double value, const std::string& unit, bool timing) {
  return push({name, value, unit, Check::kInfo, 0.0, true, timing});
}

void Report::merge(const Report& other) {
  metrics_.insert(metrics_.end(), other.metrics_.begin(), other.metrics_.end());
  for (const auto& [k, v] : other.data_.items()) data_[k] = v;
  for (const auto& [k, v] : other.timing_data_.items()) timing_data_[k] = v;
}

std::optional<Metric> Report::find(const std::string& name) const {
  for (const auto& m : metrics_)
    if (m.name == name) return m;
  return std::nullopt;
}

bool Report::deterministic_pass() const {
  for (const auto& m : metrics_)
    if (!m.timing && !m.pass) return false;
  return true;
}

bool Report::all_pass() const {
  for (const auto& m : metrics_)
    if (!m.pass) return false;
  return true;
}

nlohmann::json Report::to_json() const {
  nlohmann::json results = nlohmann::json::array();
  nlohmann::json timed = nlohmann::json::array();
  bool timing_pass = true;
  for (const auto& m : metrics_) {
    (m.timing ? timed : results).push_back(m.to_json());
    if (m.timing && !m.pass) timing_pass = false;
  }
  nlohmann::json timing = timing_data_;
  timing["wall_seconds"] = wall_seconds_;
  timing["results"] = std::move(timed);
  timing["pass"] = timing_pass;
  return {{"command", command_},
          {"seed", seed_},
          {"tol_scale", tol_scale_},
          {"config", config_},
          {"data", data_},
          {"results", std::move(results)},
          {"pass", deterministic_pass()},
          {"timing", std::move(timing)}};
}

nlohmann::json strip_timing(nlohmann::json report) {
  report.erase("timing");
  return report;
}

std::string dump_report(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace packenc::cli
