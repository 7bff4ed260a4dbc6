// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <zlib.h>

namespace packenc {

std::vector<std::uint8_t> encode_f64_le(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

std::vector<double> decode_f64_le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw std::runtime_error("decode_f64_le: payload is not a multiple of 8 bytes");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

nlohmann::json tensor_manifest(const std::string& file_name, std::span<const NamedTensor> tensors) {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    const std::uint64_t len = nt.tensor.numel() * 8;
    entries.push_back({{"name", nt.name},
                       {"shape", nt.tensor.shape()},
                       {"dtype", "f64"},
                       {"byte_offset", offset},
                       {"byte_len", len}});
    offset += len;
  }
  return {{"file", file_name}, {"tensors", entries}};
}

void write_tensor_file(const std::filesystem::path& dir, const std::string& stem,
                       std::span<const NamedTensor> tensors) {
  const auto bin_path = dir / (stem + ".bin");
  const auto json_path = dir / (stem + ".json");
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  for (const auto& nt : tensors) {
    const auto bytes = encode_f64_le(nt.tensor.data());
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!bin) throw std::runtime_error("write failed for " + bin_path.string());
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + json_path.string());
  js << tensor_manifest(stem + ".bin", tensors).dump(2) << '\n';
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& dir, const std::string& stem) {
  const auto json_path = dir / (stem + ".json");
  std::ifstream js(json_path);
  if (!js) throw std::runtime_error("cannot read " + json_path.string());
  const auto manifest = nlohmann::json::parse(js);
  const auto bin_path = dir / manifest.at("file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
  const std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::vector<NamedTensor> out;
  for (const auto& e : manifest.at("tensors")) {
    if (e.at("dtype").get<std::string>() != "f64") {
      throw std::runtime_error("unsupported dtype in " + json_path.string());
    }
    const auto offset = e.at("byte_offset").get<std::uint64_t>();
    const auto len = e.at("byte_len").get<std::uint64_t>();
    if (offset + len > payload.size()) throw std::runtime_error("tensor payload out of range in " + bin_path.string());
    auto values = decode_f64_le(std::span<const std::uint8_t>(payload).subspan(offset, len));
    out.push_back({e.at("name").get<std::string>(), Tensor(e.at("shape").get<Shape>(), std::move(values))});
  }
  return out;
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace packenc
