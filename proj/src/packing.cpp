// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/packing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace packenc::packing {

std::size_t patch_token_count(std::size_t width_px, std::size_t height_px, std::size_t patch_px) {
  if (width_px == 0 || height_px == 0 || patch_px == 0) {
    throw std::invalid_argument("patch_token_count: dimensions and patch size must be positive");
  }
  return ((width_px + patch_px - 1) / patch_px) * ((height_px + patch_px - 1) / patch_px);
}

CapacityError::CapacityError(std::size_t image_id, std::size_t token_count, std::size_t capacity)
    : std::invalid_argument("image " + std::to_string(image_id) + " needs " + std::to_string(token_count) +
                            " tokens (including its size token) but batch capacity is " +
                            std::to_string(capacity)),
      image_id_(image_id),
      token_count_(token_count) {}

double PackedBatch::utilization() const {
  return static_cast<double>(length()) / static_cast<double>(capacity);
}

nlohmann::json PackedBatch::manifest(std::size_t batch_index) const {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : segments) {
    segs.push_back({{"image_id", s.image_id},
                    {"w", s.width_px},
                    {"h", s.height_px},
                    {"token_count", s.token_count},
                    {"offset", s.offset}});
  }
  return {{"batch_index", batch_index}, {"capacity", capacity}, {"segments", segs}, {"utilization", utilization()}};
}

std::vector<std::vector<std::size_t>> first_fit_decreasing(std::span<const PackItem> items, std::size_t capacity) {
  std::vector<PackItem> order(items.begin(), items.end());
  for (const auto& it : order) {
    if (it.tokens > capacity) throw CapacityError(it.id, it.tokens, capacity);
  }
  std::stable_sort(order.begin(), order.end(), [](const PackItem& a, const PackItem& b) {
    return a.tokens != b.tokens ? a.tokens > b.tokens : a.id < b.id;
  });
  std::vector<std::vector<std::size_t>> bins;
  std::vector<std::size_t> used;
  for (const auto& it : order) {
    std::size_t b = 0;
    while (b < bins.size() && used[b] + it.tokens > capacity) ++b;
    if (b == bins.size()) {
      bins.emplace_back();
      used.push_back(0);
    }
    bins[b].push_back(it.id);
    used[b] += it.tokens;
  }
  return bins;
}

Tensor build_block_mask(std::span<const std::size_t> segment_ids) {
  if (segment_ids.empty()) throw std::invalid_argument("build_block_mask: empty segment id list");
  const std::size_t n = segment_ids.size();
  Tensor mask({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) mask.at(i, j) = segment_ids[i] == segment_ids[j] ? 1.0 : 0.0;
  return mask;
}

namespace {

/// Element j of a `dim`-wide sinusoid of `value`: pair i = j/2 uses
/// angle value / 10000^(2i/dim), sin on even j and cos on odd j.
double sinusoid(double value, std::size_t j, std::size_t dim) {
  const double i2 = static_cast<double>(2 * (j / 2));
  const double angle = value / std::pow(10000.0, i2 / static_cast<double>(dim));
  return j % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

}  // namespace

Tensor position_encoding(std::span<const std::size_t> positions, std::size_t d_model) {
  if (positions.empty() || d_model == 0) throw std::invalid_argument("position_encoding: empty input");
  Tensor out({positions.size(), d_model});
  for (std::size_t r = 0; r < positions.size(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < d_model; ++j) row[j] = sinusoid(static_cast<double>(positions[r]), j, d_model);
  }
  return out;
}

Tensor size_embedding(std::size_t width_px, std::size_t height_px, std::size_t d_model) {
  if (width_px == 0 || height_px == 0) {
    throw std::invalid_argument("size_embedding: non-positive dimension " + std::to_string(width_px) + "x" +
                                std::to_string(height_px));
  }
  if (d_model < 2 || d_model % 2 != 0) throw std::invalid_argument("size_embedding: d_model must be even");
  const std::size_t half = d_model / 2;
  const double lw = std::log2(static_cast<double>(width_px));
  const double lh = std::log2(static_cast<double>(height_px));
  Tensor out({d_model});
  for (std::size_t j = 0; j < half; ++j) {
    out[j] = sinusoid(lw, j, half);
    out[half + j] = sinusoid(lh, j, half);
  }
  return out;
}

std::vector<PackedBatch> greedy_pack(std::span<const PatchedImage> images, std::size_t capacity) {
  if (images.empty()) return {};
  const std::size_t d_model = images.front().tokens.cols();
  std::vector<PackItem> items;
  items.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].tokens.rank() != 2 || images[i].tokens.cols() != d_model) {
      throw ShapeError("greedy_pack: token shapes " + shape_str(images.front().tokens.shape()) + " and " +
                       shape_str(images[i].tokens.shape()) + " differ");
    }
    items.push_back({images[i].image_id, images[i].token_count() + 1});
  }
  auto find_image = [&](std::size_t id) -> const PatchedImage& {
    for (const auto& img : images)
      if (img.image_id == id) return img;
    throw std::invalid_argument("greedy_pack: unknown image id");
  };
  {
    std::vector<std::size_t> ids;
    for (const auto& it : items) ids.push_back(it.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw std::invalid_argument("greedy_pack: duplicate image ids");
    }
  }

  std::vector<PackedBatch> batches;
  for (const auto& bin : first_fit_decreasing(items, capacity)) {
    PackedBatch b;
    b.capacity = capacity;
    std::vector<double> data;
    for (std::size_t id : bin) {
      const PatchedImage& img = find_image(id);
      Segment seg{id, img.width_px, img.height_px, img.token_count() + 1, b.segment_ids.size()};
      data.insert(data.end(), img.tokens.data().begin(), img.tokens.data().end());
      const Tensor size_tok = size_embedding(img.width_px, img.height_px, d_model);
      data.insert(data.end(), size_tok.data().begin(), size_tok.data().end());
      for (std::size_t p = 0; p < seg.token_count; ++p) {
        b.segment_ids.push_back(id);
        b.positions.push_back(p);
      }
      b.segments.push_back(seg);
    }
    b.tokens = Tensor({b.segment_ids.size(), d_model}, std::move(data));
    b.block_mask = build_block_mask(b.segment_ids);
    batches.push_back(std::move(b));
  }
  return batches;
}

Tensor assemble_packed_input(const PackedBatch& batch) {
  return add(batch.tokens, position_encoding(batch.positions, batch.tokens.cols()));
}

double utilization(std::span<const PackedBatch> batches) {
  if (batches.empty()) return 0.0;
  std::size_t rows = 0;
  for (const auto& b : batches) rows += b.length();
  return static_cast<double>(rows) / static_cast<double>(batches.size() * batches.front().capacity);
}

}  // namespace packenc::packing
