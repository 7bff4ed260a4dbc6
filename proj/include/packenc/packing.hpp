// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "packenc/tensor.hpp"

namespace packenc::packing {

/// ceil(w / patch) * ceil(h / patch).
std::size_t patch_token_count(std::size_t width_px, std::size_t height_px, std::size_t patch_px);

struct PatchedImage {
  std::size_t image_id = 0;
  std::size_t width_px = 0;
  std::size_t height_px = 0;
  Tensor tokens;  // t x d_model patch embeddings, size token not included

  std::size_t token_count() const { return tokens.rows(); }
};

/// Thrown when one image (plus its size token) cannot fit any batch.
class CapacityError : public std::invalid_argument {
 public:
  CapacityError(std::size_t image_id, std::size_t token_count, std::size_t capacity);
  std::size_t image_id() const noexcept { return image_id_; }
  std::size_t token_count() const noexcept { return token_count_; }

 private:
  std::size_t image_id_;
  std::size_t token_count_;
};

struct Segment {
  std::size_t image_id = 0;
  std::size_t width_px = 0;
  std::size_t height_px = 0;
  std::size_t token_count = 0;  // patch tokens + 1 size token
  std::size_t offset = 0;       // first row inside the batch
};

struct PackedBatch {
  Tensor tokens;                       // L x d_model, size token last in each segment
  std::vector<std::size_t> segment_ids;  // image_id per row
  std::vector<std::size_t> positions;    // restart at 0 in every segment
  Tensor block_mask;                   // L x L
  std::size_t capacity = 0;
  std::vector<Segment> segments;

  std::size_t length() const { return segment_ids.size(); }
  double utilization() const;
  nlohmann::json manifest(std::size_t batch_index) const;
};

struct PackItem {
  std::size_t id = 0;
  std::size_t tokens = 0;  // including the size token
};

/// First-fit-decreasing over item sizes: sort descending (ties by id
/// ascending), drop each item into the first bin with room, open a new bin
/// otherwise. Returns item ids per bin, in placement order.
std::vector<std::vector<std::size_t>> first_fit_decreasing(std::span<const PackItem> items, std::size_t capacity);

/// Appends each image's size token and packs with first_fit_decreasing.
std::vector<PackedBatch> greedy_pack(std::span<const PatchedImage> images, std::size_t capacity);

/// M[i][j] = 1 iff segment_ids[i] == segment_ids[j].
Tensor build_block_mask(std::span<const std::size_t> segment_ids);

/// Sinusoidal encoding of within-segment positions, base 10^4:
/// row[2i] = sin(p / 10^(4 * 2i / d)), row[2i+1] = cos(same).
Tensor position_encoding(std::span<const std::size_t> positions, std::size_t d_model);

/// First half sinusoidal in log2(width), second half in log2(height).
/// d_model must be even.
Tensor size_embedding(std::size_t width_px, std::size_t height_px, std::size_t d_model);

/// tokens + position_encoding(positions). The block mask is not applied to
/// the input; attention enforces it.
Tensor assemble_packed_input(const PackedBatch& batch);

/// Sum of packed rows over batches * capacity.
double utilization(std::span<const PackedBatch> batches);

}  // namespace packenc::packing
