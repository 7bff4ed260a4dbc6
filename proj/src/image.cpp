// Copyright 2026 The packenc Authors
// SPDX-License-Identifier: Apache-2.0

#include "packenc/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace packenc::encoder {

ImageGrid::ImageGrid(std::size_t height, std::size_t width, double fill)
    : height_px(height), width_px(width), pixels(height * width * kChannels, fill) {
  validate();
}

void ImageGrid::validate() const {
  if (height_px == 0 || width_px == 0) {
    throw std::invalid_argument("ImageGrid: dimensions must be positive, got " + std::to_string(height_px) + "x" +
                                std::to_string(width_px));
  }
  if (pixels.size() != height_px * width_px * kChannels) {
    throw std::invalid_argument("ImageGrid: pixel count does not match dimensions");
  }
  for (double v : pixels) {
    if (!std::isfinite(v)) throw std::invalid_argument("ImageGrid: non-finite pixel");
  }
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
  const double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  const double clamped = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(clamped));
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, clamped - static_cast<double>(i0)};
}

}  // namespace

ImageGrid resize_bilinear(const ImageGrid& img, std::size_t height, std::size_t width) {
  img.validate();
  if (height == 0 || width == 0) throw std::invalid_argument("resize_bilinear: target size must be positive");
  if (height == img.height_px && width == img.width_px) return img;
  ImageGrid out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const Tap ty = source_tap(y, img.height_px, height);
    for (std::size_t x = 0; x < width; ++x) {
      const Tap tx = source_tap(x, img.width_px, width);
      for (std::size_t c = 0; c < ImageGrid::kChannels; ++c) {
        const double top = (1.0 - tx.frac) * img.at(ty.i0, tx.i0, c) + tx.frac * img.at(ty.i0, tx.i1, c);
        const double bottom = (1.0 - tx.frac) * img.at(ty.i1, tx.i0, c) + tx.frac * img.at(ty.i1, tx.i1, c);
        out.at(y, x, c) = (1.0 - ty.frac) * top + ty.frac * bottom;
      }
    }
  }
  return out;
}

ImageGrid random_uniform_scale(const ImageGrid& img, Rng& rng, ScaleRange range) {
  if (!(range.lo > 0.0 && range.lo <= range.hi)) {
    throw std::invalid_argument("random_uniform_scale: invalid range [" + std::to_string(range.lo) + ", " +
                                std::to_string(range.hi) + "]");
  }
  const double s = rng.uniform(range.lo, range.hi);
  const auto scaled = [s](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(s * static_cast<double>(n))));
  };
  return resize_bilinear(img, scaled(img.height_px), scaled(img.width_px));
}

ImageGrid make_shape_image(Rng& rng, std::size_t height, std::size_t width) {
  ImageGrid img(height, width);
  for (auto& v : img.pixels) v = 0.3 * rng.uniform();
  const double color[3] = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
  const auto kind = rng.below(3);
  const double cy = rng.uniform(0.3, 0.7) * static_cast<double>(height);
  const double cx = rng.uniform(0.3, 0.7) * static_cast<double>(width);
  const double r = rng.uniform(0.2, 0.4) * static_cast<double>(std::min(height, width));
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      bool inside = false;
      switch (kind) {
        case 0:
          inside = dx * dx + dy * dy <= r * r;
          break;
        case 1:
          inside = std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
          break;
        default:
          inside = dy <= r && dy >= -r && std::abs(dx) <= 0.5 * (dy + r);
          break;
      }
      if (inside)
        for (std::size_t c = 0; c < ImageGrid::kChannels; ++c) img.at(y, x, c) = color[c];
    }
  }
  return img;
}

}  // namespace packenc::encoder
