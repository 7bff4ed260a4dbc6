// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "packenc/rng.hpp"

namespace packenc::encoder {

/// RGB image with channel-last pixel storage, values nominally in [0, 1].
struct ImageGrid {
  std::size_t height_px = 0;
  std::size_t width_px = 0;
  std::vector<double> pixels;  // height * width * 3

  static constexpr std::size_t kChannels = 3;

  ImageGrid() = default;
  ImageGrid(std::size_t height, std::size_t width, double fill = 0.0);

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width_px + x) * kChannels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width_px + x) * kChannels + c]; }

  /// Positive dimensions, matching pixel count, finite values.
  void validate() const;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// Bilinear resample with half-pixel centers and edge clamping. Resizing to
/// the same size returns the input unchanged.
ImageGrid resize_bilinear(const ImageGrid& img, std::size_t height, std::size_t width);

struct ScaleRange {
  double lo = 0.5;
  double hi = 1.5;
};

/// Draws s ~ U[lo, hi] and resizes to (round(s h), round(s w)), at least 1x1.
/// Throws std::invalid_argument unless 0 < lo <= hi.
ImageGrid random_uniform_scale(const ImageGrid& img, Rng& rng, ScaleRange range = {});

/// Colored disc, rectangle, or triangle over a uniform-noise background.
ImageGrid make_shape_image(Rng& rng, std::size_t height, std::size_t width);

}  // namespace packenc::encoder
