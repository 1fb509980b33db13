#pragma once

// Visualization helpers for the `render` subcommand: mask contours over the
// image, colormapped depth panels, side-by-side layouts. Cosmetic only --
// nothing here feeds back into training or evaluation.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

/// Distinct instance colors: golden-angle hue walk at full saturation.
inline void instance_color(int k, double rgb[3]) {
  const double h = std::fmod(0.13 + k * 0.3819660112501051, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  if (h < 1) { r = 1; g = x; }
  else if (h < 2) { r = x; g = 1; }
  else if (h < 3) { g = 1; b = x; }
  else if (h < 4) { g = x; b = 1; }
  else if (h < 5) { r = x; b = 1; }
  else { r = 1; b = x; }
  rgb[0] = 0.15 + 0.85 * r;
  rgb[1] = 0.15 + 0.85 * g;
  rgb[2] = 0.15 + 0.85 * b;
}

/// Blue -> cyan -> yellow -> red ramp for depth maps.
inline Raster colormap_depth(const Raster& depth) {
  if (depth.channels != 1)
    throw ValidationError("colormap_depth: expected single-channel raster");
  Raster out(depth.height, depth.width, 3);
  for (int p = 0; p < depth.pixels(); ++p) {
    double t = depth.data[p];
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    double r, g, b;
    if (t < 1.0 / 3) {
      const double u = t * 3;
      r = 0.05;
      g = 0.2 + 0.6 * u;
      b = 0.6 + 0.4 * u;
    } else if (t < 2.0 / 3) {
      const double u = (t - 1.0 / 3) * 3;
      r = 0.05 + 0.9 * u;
      g = 0.8;
      b = 1.0 - 0.9 * u;
    } else {
      const double u = (t - 2.0 / 3) * 3;
      r = 0.95;
      g = 0.8 - 0.7 * u;
      b = 0.1;
    }
    out.data[static_cast<std::size_t>(p) * 3 + 0] = r;
    out.data[static_cast<std::size_t>(p) * 3 + 1] = g;
    out.data[static_cast<std::size_t>(p) * 3 + 2] = b;
  }
  return out;
}

/// Draws binary-mask contours (mask pixels with a non-mask 4-neighbor) over
/// a copy of the image, one color per instance, plus each instance's box.
inline Raster overlay_instances(const Raster& image, const std::vector<Raster>& masks,
                                const std::vector<Box>& boxes) {
  if (image.channels != 3)
    throw ValidationError("overlay_instances: expected an RGB image");
  Raster out = image;
  const int H = image.height, W = image.width;
  const auto inside = [&](const Raster& m, int y, int x) {
    return y >= 0 && y < H && x >= 0 && x < W && m.at(y, x) > 0.5;
  };
  for (std::size_t k = 0; k < masks.size(); ++k) {
    double rgb[3];
    instance_color(static_cast<int>(k), rgb);
    const Raster& m = masks[k];
    if (!m.same_shape(out) && !(m.height == H && m.width == W))
      throw ValidationError("overlay_instances: mask shape mismatch");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (m.at(y, x) <= 0.5) continue;
        const bool edge = !inside(m, y - 1, x) || !inside(m, y + 1, x) ||
                          !inside(m, y, x - 1) || !inside(m, y, x + 1);
        if (!edge) {
          // faint fill
          for (int c = 0; c < 3; ++c)
            out.at(y, x, c) = 0.75 * out.at(y, x, c) + 0.25 * rgb[c];
          continue;
        }
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb[c];
      }
    if (k < boxes.size() && !boxes[k].empty()) {
      const PixelRect r = pixel_rect(boxes[k], H, W);
      for (int x = r.x0; x < r.x1; ++x) {
        for (int c = 0; c < 3; ++c) {
          if (r.y0 < H) out.at(r.y0, x, c) = rgb[c];
          if (r.y1 - 1 >= 0) out.at(r.y1 - 1, x, c) = rgb[c];
        }
      }
      for (int y = r.y0; y < r.y1; ++y) {
        for (int c = 0; c < 3; ++c) {
          if (r.x0 < W) out.at(y, r.x0, c) = rgb[c];
          if (r.x1 - 1 >= 0) out.at(y, r.x1 - 1, c) = rgb[c];
        }
      }
    }
  }
  return out;
}

/// Horizontal concatenation with a 2px separator, padding shorter panels.
inline Raster hstack(const std::vector<Raster>& panels) {
  if (panels.empty()) throw ValidationError("hstack: no panels");
  int H = 0, W = 0;
  for (const Raster& p : panels) {
    if (p.channels != 3) throw ValidationError("hstack: panels must be RGB");
    H = std::max(H, p.height);
    W += p.width;
  }
  W += 2 * (static_cast<int>(panels.size()) - 1);
  Raster out(H, W, 3, 1.0);
  int x0 = 0;
  for (const Raster& p : panels) {
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x0 + x, c) = p.at(y, x, c);
    x0 += p.width + 2;
  }
  return out;
}

} // namespace dgseg
