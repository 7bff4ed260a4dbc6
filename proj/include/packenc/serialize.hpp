// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packenc/tensor.hpp"

namespace packenc {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// A weight file is a flat little-endian float64 payload ("<stem>.bin") with a
// JSON sidecar ("<stem>.json"):
//   {"file": "<stem>.bin",
//    "tensors": [{"name", "shape", "dtype": "f64", "byte_offset", "byte_len"}]}

nlohmann::json tensor_manifest(const std::string& file_name, std::span<const NamedTensor> tensors);

/// Writes `<stem>.bin` and `<stem>.json` into `dir`. Throws std::runtime_error
/// when a file cannot be written.
void write_tensor_file(const std::filesystem::path& dir, const std::string& stem,
                       std::span<const NamedTensor> tensors);

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& dir, const std::string& stem);

std::vector<std::uint8_t> encode_f64_le(std::span<const double> values);
std::vector<double> decode_f64_le(std::span<const std::uint8_t> bytes);

/// CRC-32 (zlib polynomial) of a file's bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace packenc
