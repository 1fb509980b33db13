#pragma once

// Per-pixel input features for the dynamic mask heads.
//
// The base stack is computed once per image (8 channels); each instance then
// gets two extra channels of coordinates relative to its own anchor, so a
// head sees 10 inputs per pixel. Base channels, in order:
//
//   0..2  R, G, B
//   3     luma (0.299 R + 0.587 G + 0.114 B)
//   4     |d(luma)/dx|  central difference, one-sided at borders
//   5     |d(luma)/dy|
//   6     3x3 box blur of luma, replicate padding
//   7     luma minus blur (local contrast)

#include <cmath>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

constexpr int kBaseFeatureChannels = 8;
constexpr int kRelCoordChannels = 2;
constexpr int kHeadInputChannels = kBaseFeatureChannels + kRelCoordChannels;

inline Raster base_features(const Raster& image) {
  if (image.channels != 3)
    throw ValidationError("base_features: expected a 3-channel image");
  const int H = image.height, W = image.width;
  Raster f(H, W, kBaseFeatureChannels);

  Raster luma(H, W, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double r = image.at(y, x, 0), g = image.at(y, x, 1), b = image.at(y, x, 2);
      const double l = 0.299 * r + 0.587 * g + 0.114 * b;
      luma.at(y, x) = l;
      f.at(y, x, 0) = r;
      f.at(y, x, 1) = g;
      f.at(y, x, 2) = b;
      f.at(y, x, 3) = l;
    }

  auto lum = [&](int y, int x) {
    y = y < 0 ? 0 : (y >= H ? H - 1 : y);
    x = x < 0 ? 0 : (x >= W ? W - 1 : x);
    return luma.at(y, x);
  };

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // Central differences become one-sided at the border via replication;
      // keep the same 1/2 scale everywhere so the channel is continuous.
      f.at(y, x, 4) = std::abs(lum(y, x + 1) - lum(y, x - 1)) * 0.5;
      f.at(y, x, 5) = std::abs(lum(y + 1, x) - lum(y - 1, x)) * 0.5;
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) s += lum(y + dy, x + dx);
      const double blur = s / 9.0;
      f.at(y, x, 6) = blur;
      f.at(y, x, 7) = luma.at(y, x) - blur;
    }
  return f;
}

/// Relative-coordinate channels for one instance: (dx, dy) from the anchor,
/// normalized by half the image diagonal and clamped to [-1, 1].
inline Raster rel_coords(int height, int width, PixelLoc anchor) {
  if (height <= 0 || width <= 0)
    throw ValidationError("rel_coords: empty raster shape");
  Raster rc(height, width, kRelCoordChannels);
  const double half_diag =
      0.5 * std::sqrt(static_cast<double>(height) * height +
                      static_cast<double>(width) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double dx = (x - anchor.x) / half_diag;
      double dy = (y - anchor.y) / half_diag;
      rc.at(y, x, 0) = dx < -1.0 ? -1.0 : (dx > 1.0 ? 1.0 : dx);
      rc.at(y, x, 1) = dy < -1.0 ? -1.0 : (dy > 1.0 ? 1.0 : dy);
    }
  return rc;
}

/// The 10-channel head input: base features with an instance's relative
/// coordinates appended.
inline Raster head_input(const Raster& base, PixelLoc anchor) {
  if (base.channels != kBaseFeatureChannels)
    throw ValidationError("head_input: base stack must have 8 channels");
  const Raster rc = rel_coords(base.height, base.width, anchor);
  Raster in(base.height, base.width, kHeadInputChannels);
  const int px = base.pixels();
  for (int p = 0; p < px; ++p) {
    for (int c = 0; c < kBaseFeatureChannels; ++c)
      in.data[static_cast<std::size_t>(p) * kHeadInputChannels + c] =
          base.data[static_cast<std::size_t>(p) * kBaseFeatureChannels + c];
    in.data[static_cast<std::size_t>(p) * kHeadInputChannels + 8] =
        rc.data[static_cast<std::size_t>(p) * 2 + 0];
    in.data[static_cast<std::size_t>(p) * kHeadInputChannels + 9] =
        rc.data[static_cast<std::size_t>(p) * 2 + 1];
  }
  return in;
}

} // namespace dgseg
