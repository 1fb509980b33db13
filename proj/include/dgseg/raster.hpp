#pragma once

// Dense row-major rasters, boxes, the dilated 8-neighbor edge graph, and
// bilinear resampling. Everything downstream (features, losses, matching)
// is built on these three types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgseg/errors.hpp"

namespace dgseg {

/// Row-major H x W x C grid of doubles, channels interleaved.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;

  Raster() = default;
  Raster(int h, int w, int c = 1, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || c <= 0)
      throw ValidationError("raster dimensions must be non-negative (channels positive)");
  }

  int pixels() const { return height * width; }
  std::size_t size() const { return data.size(); }

  std::size_t idx(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c = 0) { return data[idx(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data[idx(y, x, c)]; }

  bool same_shape(const Raster& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool in_unit_range() const {
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
  }
};

/// Axis-aligned box, continuous coords, half-open [x0,x1) x [y0,y1).
/// The all-zero box is the "empty" sentinel.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double w() const { return x1 - x0; }
  double h() const { return y1 - y0; }
  double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
  bool empty() const { return !(x1 > x0) || !(y1 > y0); }

  Box scaled(double f) const { return {x0 * f, y0 * f, x1 * f, y1 * f}; }
};

/// Integer pixel rect, half-open. Derived from a Box by rounding each edge
/// to the nearest integer and clamping into the raster.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
  int area() const { return std::max(0, w()) * std::max(0, h()); }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

inline bool box_overlap(const Box& a, const Box& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

inline PixelRect pixel_rect(const Box& b, int height, int width) {
  PixelRect r;
  r.x0 = std::clamp(static_cast<int>(std::llround(b.x0)), 0, width);
  r.x1 = std::clamp(static_cast<int>(std::llround(b.x1)), 0, width);
  r.y0 = std::clamp(static_cast<int>(std::llround(b.y0)), 0, height);
  r.y1 = std::clamp(static_cast<int>(std::llround(b.y1)), 0, height);
  return r;
}

struct PixelLoc {
  int x = 0;
  int y = 0;
};

/// Undirected pixel-pair graph: the 8-neighborhood at a given dilation.
/// Edges are stored once each as flat-index pairs (first < second),
/// sorted lexicographically -- a canonical order every consumer can rely
/// on for reproducible accumulation.
struct EdgeGraph {
  int height = 0;
  int width = 0;
  int dilation = 1;
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
};

/// Builds the dilated 8-neighbor graph. For each pixel p in raster order the
/// four "forward" offsets (dy,dx) = (0,+d), (+d,-d), (+d,0), (+d,+d) are
/// emitted when in bounds; together with the implicit reverse directions this
/// covers all 8 neighbors exactly once. For valid offsets the four targets
/// are already in ascending flat order, so the edge list comes out sorted
/// without a separate pass.
inline EdgeGraph neighbor_edges(int height, int width, int dilation) {
  if (height < 0 || width < 0)
    throw ValidationError("neighbor_edges: negative raster shape");
  if (dilation < 1)
    throw ValidationError("neighbor_edges: dilation must be >= 1");
  EdgeGraph g;
  g.height = height;
  g.width = width;
  g.dilation = dilation;
  const int d = dilation;
  g.edges.reserve(static_cast<std::size_t>(std::max(0, height * width)) * 4);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::int32_t p = y * width + x;
      if (x + d < width) g.edges.emplace_back(p, p + d);
      if (y + d < height) {
        if (x - d >= 0) g.edges.emplace_back(p, p + d * width - d);
        g.edges.emplace_back(p, p + d * width);
        if (x + d < width) g.edges.emplace_back(p, p + d * width + d);
      }
    }
  }
  return g;
}

/// Bilinear resample with align-corners mapping: output corner pixels see
/// exactly the input corner values, src = dst * (srcN-1)/(dstN-1). A
/// single-pixel output axis samples coordinate 0. Resampling to the same
/// shape reproduces the input exactly.
inline Raster resize_bilinear(const Raster& src, int out_h, int out_w) {
  if (src.height <= 0 || src.width <= 0)
    throw ValidationError("resize_bilinear: empty source raster");
  if (out_h <= 0 || out_w <= 0)
    throw ValidationError("resize_bilinear: output shape must be positive");
  if (out_h == src.height && out_w == src.width) return src;

  Raster dst(out_h, out_w, src.channels);
  const double fy = (out_h > 1) ? static_cast<double>(src.height - 1) / (out_h - 1) : 0.0;
  const double fx = (out_w > 1) ? static_cast<double>(src.width - 1) / (out_w - 1) : 0.0;
  const int C = src.channels;
  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = oy * fy;
    int y0 = static_cast<int>(sy);
    if (y0 > src.height - 2) y0 = std::max(0, src.height - 2);
    const double ty = sy - y0;
    const int y1 = std::min(y0 + 1, src.height - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = ox * fx;
      int x0 = static_cast<int>(sx);
      if (x0 > src.width - 2) x0 = std::max(0, src.width - 2);
      const double tx = sx - x0;
      const int x1 = std::min(x0 + 1, src.width - 1);
      for (int c = 0; c < C; ++c) {
        const double v00 = src.at(y0, x0, c), v01 = src.at(y0, x1, c);
        const double v10 = src.at(y1, x0, c), v11 = src.at(y1, x1, c);
        const double top = v00 + (v01 - v00) * tx;
        const double bot = v10 + (v11 - v10) * tx;
        dst.at(oy, ox, c) = top + (bot - top) * ty;
      }
    }
  }
  return dst;
}

/// Threshold a probability raster into {0,1}. Strictly-greater comparison:
/// a pixel at exactly `thr` stays background.
inline Raster binarize(const Raster& prob, double thr = 0.5) {
  Raster out(prob.height, prob.width, 1);
  if (prob.channels != 1)
    throw ValidationError("binarize: expected single-channel raster");
  for (std::size_t i = 0; i < prob.data.size(); ++i)
    out.data[i] = prob.data[i] > thr ? 1.0 : 0.0;
  return out;
}

/// Tight bounding box of the {v > 0.5} support, half-open pixel coords.
/// Empty support yields the empty sentinel box.
inline Box mask_bbox(const Raster& mask) {
  int minx = mask.width, miny = mask.height, maxx = -1, maxy = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) > 0.5) {
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
      }
  if (maxx < 0) return Box{};
  return Box{static_cast<double>(minx), static_cast<double>(miny),
             static_cast<double>(maxx + 1), static_cast<double>(maxy + 1)};
}

} // namespace dgseg
