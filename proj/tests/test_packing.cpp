// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "packenc/attention.hpp"
#include "packenc/packing.hpp"
#include "packenc/rng.hpp"

namespace packenc::packing {
namespace {

std::vector<PatchedImage> images_with_counts(std::initializer_list<std::size_t> counts_with_size_token,
                                             std::size_t d = 2, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<PatchedImage> out;
  std::size_t id = 0;
  for (std::size_t c : counts_with_size_token) {
    out.push_back({id, 10 + id, 20 + id, rng.normal_tensor({c - 1, d}, 1.0)});
    ++id;
  }
  return out;
}

std::vector<std::size_t> batch_counts(const PackedBatch& b) {
  std::vector<std::size_t> c;
  for (const auto& s : b.segments) c.push_back(s.token_count);
  return c;
}

TEST(PatchTokenCount, CeilingPerAxis) {
  EXPECT_EQ(patch_token_count(14, 14, 14), 1u);
  EXPECT_EQ(patch_token_count(15, 14, 14), 2u);
  EXPECT_EQ(patch_token_count(224, 112, 14), 128u);
}

TEST(GreedyPack, OneImageOneBatch) {
  const auto images = images_with_counts({5});
  const auto batches = greedy_pack(images, 8);
  ASSERT_EQ(batches.size(), 1u);
  ASSERT_EQ(batches[0].segments.size(), 1u);
  EXPECT_DOUBLE_EQ(batches[0].utilization(), 5.0 / 8.0);
}

TEST(GreedyPack, FirstFitDecreasingFixture) {
  const auto images = images_with_counts({30, 60, 40, 50});
  const auto batches = greedy_pack(images, 100);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batch_counts(batches[0]), (std::vector<std::size_t>{60, 40}));
  EXPECT_EQ(batch_counts(batches[1]), (std::vector<std::size_t>{50, 30}));
  EXPECT_DOUBLE_EQ(utilization(batches), 180.0 / 200.0);

  const std::vector<PackItem> items = {{0, 60}, {1, 50}, {2, 40}, {3, 30}};
  EXPECT_EQ(first_fit_decreasing(items, 100), (std::vector<std::vector<std::size_t>>{{0, 2}, {1, 3}}));
}

TEST(GreedyPack, TiesBrokenByImageId) {
  const std::vector<PackItem> items = {{5, 4}, {2, 4}, {9, 4}};
  EXPECT_EQ(first_fit_decreasing(items, 8), (std::vector<std::vector<std::size_t>>{{2, 5}, {9}}));
}

TEST(GreedyPack, OversizedImageNamesTokenCount) {
  const auto images = images_with_counts({100});
  try {
    greedy_pack(images, 99);
    FAIL() << "expected CapacityError";
  } catch (const CapacityError& e) {
    EXPECT_EQ(e.image_id(), 0u);
    EXPECT_EQ(e.token_count(), 100u);
    EXPECT_NE(std::string(e.what()).find("100"), std::string::npos);
  }
}

TEST(GreedyPack, BatchInvariantsAndContentProperty) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(2000 + s);
    const std::size_t n = 1 + rng.below(12);
    const std::size_t capacity = 8 + rng.below(40);
    std::vector<PatchedImage> images;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = 1 + rng.below(capacity - 1);
      images.push_back({i, 1 + rng.below(300), 1 + rng.below(300), rng.normal_tensor({t, 4}, 1.0)});
    }
    const auto batches = greedy_pack(images, capacity);
    std::map<std::size_t, Tensor> seen;
    for (const auto& b : batches) {
      ASSERT_LE(b.length(), capacity);
      ASSERT_EQ(b.tokens.rows(), b.length());
      for (std::size_t i = 0; i < b.length(); ++i)
        for (std::size_t j = 0; j < b.length(); ++j)
          ASSERT_EQ(b.block_mask.at(i, j), b.segment_ids[i] == b.segment_ids[j] ? 1.0 : 0.0);
      for (const auto& seg : b.segments) {
        const PatchedImage& img = images[seg.image_id];
        ASSERT_EQ(seg.token_count, img.token_count() + 1);
        for (std::size_t p = 0; p < seg.token_count; ++p) {
          ASSERT_EQ(b.positions[seg.offset + p], p);
          ASSERT_EQ(b.segment_ids[seg.offset + p], seg.image_id);
        }
        Tensor content({img.token_count(), 4});
        for (std::size_t r = 0; r < img.token_count(); ++r)
          for (std::size_t c = 0; c < 4; ++c) content.at(r, c) = b.tokens.at(seg.offset + r, c);
        const Tensor size_tok = size_embedding(img.width_px, img.height_px, 4);
        for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(b.tokens.at(seg.offset + img.token_count(), c), size_tok[c]);
        ASSERT_TRUE(seen.emplace(seg.image_id, content).second) << "image packed twice";
      }
    }
    ASSERT_EQ(seen.size(), n);
    for (const auto& [id, content] : seen) EXPECT_EQ(content, images[id].tokens);
  }
}

TEST(GreedyPack, ManifestShape) {
  const auto images = images_with_counts({3, 2});
  const auto batches = greedy_pack(images, 6);
  const auto m = batches[0].manifest(0);
  EXPECT_EQ(m["batch_index"], 0);
  EXPECT_EQ(m["capacity"], 6);
  ASSERT_EQ(m["segments"].size(), 2u);
  EXPECT_EQ(m["segments"][1]["image_id"], 1);
  EXPECT_EQ(m["segments"][1]["offset"], 3);
  EXPECT_EQ(m["segments"][1]["token_count"], 2);
  EXPECT_EQ(m["segments"][1]["w"], 11);
  EXPECT_EQ(m["segments"][1]["h"], 21);
  EXPECT_DOUBLE_EQ(m["utilization"].get<double>(), 5.0 / 6.0);
}

TEST(BlockMask, Fixtures) {
  EXPECT_EQ(build_block_mask(std::vector<std::size_t>{0, 0, 0}), Tensor::ones({3, 3}));
  EXPECT_EQ(build_block_mask(std::vector<std::size_t>{0, 0, 1}), Tensor::from_rows({{1, 1, 0}, {1, 1, 0}, {0, 0, 1}}));
  EXPECT_EQ(build_block_mask(std::vector<std::size_t>{0, 1, 1, 2}),
            Tensor::from_rows({{1, 0, 0, 0}, {0, 1, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 1}}));
}

TEST(BlockMask, DependsOnlyOnSegmentClasses) {
  Rng rng(12);
  for (int s = 0; s < 20; ++s) {
    std::vector<std::size_t> ids(10);
    for (auto& x : ids) x = rng.below(4);
    std::vector<std::size_t> relabel = {7, 3, 11, 5};
    std::vector<std::size_t> renamed;
    for (auto x : ids) renamed.push_back(relabel[x]);
    const Tensor m = build_block_mask(ids);
    EXPECT_EQ(m, build_block_mask(renamed));
    EXPECT_EQ(m, transpose(m));
  }
}

TEST(PositionEncoding, RestartsAndHandValues) {
  const Tensor pe = position_encoding(std::vector<std::size_t>{0, 1, 0, 1}, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(pe.at(0, c), pe.at(2, c));
    EXPECT_EQ(pe.at(1, c), pe.at(3, c));
  }
  EXPECT_DOUBLE_EQ(pe.at(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe.at(1, 1), std::cos(1.0));
  EXPECT_NEAR(pe.at(1, 2), std::sin(0.01), 1e-16);
  EXPECT_NEAR(pe.at(1, 3), std::cos(0.01), 1e-16);
}

TEST(SizeEmbedding, Examples) {
  EXPECT_EQ(size_embedding(31, 17, 8), size_embedding(31, 17, 8));
  const Tensor sq = size_embedding(64, 64, 6);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(sq[j], sq[3 + j]);
  const Tensor e = size_embedding(224, 112, 4);
  const double lw = std::log2(224.0), lh = std::log2(112.0);
  EXPECT_NEAR(lw, 7.807, 1e-3);
  EXPECT_NEAR(lh, 6.807, 1e-3);
  EXPECT_DOUBLE_EQ(e[0], std::sin(lw));
  EXPECT_DOUBLE_EQ(e[1], std::cos(lw));
  EXPECT_DOUBLE_EQ(e[2], std::sin(lh));
  EXPECT_DOUBLE_EQ(e[3], std::cos(lh));
  EXPECT_THROW(size_embedding(0, 5, 4), std::invalid_argument);
  EXPECT_THROW(size_embedding(5, 5, 3), std::invalid_argument);
}

TEST(AssemblePackedInput, ZeroTokensGivePositionEncoding) {
  std::vector<PatchedImage> images = {{0, 4, 4, Tensor::zeros({3, 4})}};
  auto batches = greedy_pack(images, 10);
  batches[0].tokens = Tensor::zeros(batches[0].tokens.shape());
  EXPECT_EQ(assemble_packed_input(batches[0]), position_encoding(batches[0].positions, 4));
}

TEST(AssemblePackedInput, SegmentIndependentOfPlacement) {
  const auto images = images_with_counts({4, 6, 3}, 4, 3);
  const auto packed = greedy_pack(images, 13);
  ASSERT_EQ(packed.size(), 1u);
  const Tensor x = assemble_packed_input(packed[0]);
  for (const auto& seg : packed[0].segments) {
    const std::vector<PatchedImage> alone = {images[seg.image_id]};
    const Tensor y = assemble_packed_input(greedy_pack(alone, 13)[0]);
    for (std::size_t r = 0; r < seg.token_count; ++r)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(x.at(seg.offset + r, c), y.at(r, c));
  }
}

// Packed hybrid-stack run split per segment, max deviation from solo runs.
double hybrid_pack_error(const PackedBatch& packed, std::span<const PatchedImage> images,
                         std::span<const attention::AttentionParams> params, const attention::HybridStackConfig& cfg,
                         std::span<const std::size_t> segments) {
  const Tensor out = attention::hybrid_stack_forward(assemble_packed_input(packed), params, cfg, segments);
  double err = 0.0;
  for (const auto& seg : packed.segments) {
    const std::vector<PatchedImage> alone = {images[seg.image_id]};
    const Tensor solo = attention::hybrid_stack_forward(assemble_packed_input(greedy_pack(alone, 64)[0]), params, cfg);
    for (std::size_t r = 0; r < seg.token_count; ++r)
      for (std::size_t c = 0; c < solo.cols(); ++c)
        err = std::max(err, std::abs(out.at(seg.offset + r, c) - solo.at(r, c)));
  }
  return err;
}

TEST(PackEquivalence, TwoSegmentHybridStackAndNegativeControl) {
  Rng rng(7);
  const std::size_t d = 4;
  attention::HybridStackConfig cfg{2, d, attention::FeatureMap::kEluPlusOne};
  const std::vector<attention::AttentionParams> params = {
      attention::AttentionParams::random(d, rng), attention::AttentionParams::random(d, rng),
      attention::AttentionParams::random(d, rng)};
  const auto images = images_with_counts({5, 7}, d, 21);
  const auto packed = greedy_pack(images, 64);
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_LE(hybrid_pack_error(packed[0], images, params, cfg, packed[0].segment_ids), 1e-9);
  // Dropping the block structure must be caught by the same check.
  const std::vector<std::size_t> no_mask(packed[0].length(), 0);
  EXPECT_GT(hybrid_pack_error(packed[0], images, params, cfg, no_mask), 1e-3);
}

}  // namespace
}  // namespace packenc::packing
