#pragma once

// Synthetic desk-scene generator.
//
// A scene is a handful of flat shapes (ellipse / rectangle / capsule) on a
// smoothly shaded background. Depth is synthesized directly: the background
// gets a shallow gradient (far), each object a planar ramp inside its own
// depth band (near), bands pairwise separated. Larger value = nearer, so
// painting in ascending band order makes nearer objects overwrite farther
// ones in both the depth map and the visibility (owner) map -- visible
// masks are disjoint by construction.
//
// The "pseudo" depth the trainer consumes is the clean map passed through
// corrupt_depth (blur + low-frequency noise + gamma), imitating an
// off-the-shelf monocular depth estimate: locally ordered, globally sloppy.
//
// Difficulty knobs: camouflage blends object colors toward the background,
// and distractors paint object-colored blobs that have *background* depth --
// color affinity then actively lies while depth still separates figure from
// ground.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"
#include "dgseg/rng.hpp"

namespace dgseg {

enum class ShapeKind : int { Ellipse = 1, Rectangle = 2, Capsule = 3 };

inline const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Capsule: return "capsule";
  }
  return "unknown";
}

struct DepthNoiseConfig {
  double blur_radius = 1.0;     // gaussian halfwidth in px; 0 disables
  double noise_amplitude = 0.02; // low-frequency additive noise bound; 0 disables
  int noise_cell = 16;           // noise lattice spacing in px
  double gamma = 1.0;            // monotone remap; 1 disables
};

struct SceneConfig {
  int height = 96;
  int width = 96;
  int min_objects = 3;
  int max_objects = 3;
  bool allow_overlap = false;
  double camouflage = 0.0;  // 0 = distinct colors, 1 = background color
  bool distractors = false; // object-colored blobs at background depth
  double color_noise = 0.01;
  double min_size_frac = 0.22; // object major semi-axis, fraction of min(H,W)
  double max_size_frac = 0.38;
  double band_lo = 0.30; // object depth bands live in [band_lo, band_hi]
  double band_hi = 0.92;
  double band_width = 0.08;
  double band_gap = 0.06; // minimum space between bands
  double min_visible_frac = 0.35;
  int max_retries = 64;
  DepthNoiseConfig noise;

  void validate() const {
    if (height < 16 || width < 16)
      throw ValidationError("scene: raster must be at least 16x16");
    if (min_objects < 0 || max_objects < min_objects)
      throw ValidationError("scene: need 0 <= min_objects <= max_objects");
    if (!(min_size_frac > 0.0) || !(max_size_frac >= min_size_frac) ||
        max_size_frac > 0.45)
      throw ValidationError("scene: object size fractions out of range");
    if (!(band_lo > 0.2) || !(band_hi <= 1.0) || !(band_hi > band_lo))
      throw ValidationError("scene: depth band range invalid");
    const int n = max_objects;
    if (n > 0 && n * band_width + (n - 1) * band_gap > band_hi - band_lo)
      throw ValidationError("scene: depth bands cannot fit max_objects separated bands");
    if (!(camouflage >= 0.0 && camouflage <= 1.0))
      throw ValidationError("scene: camouflage must lie in [0,1]");
    if (!(min_visible_frac > 0.0 && min_visible_frac <= 1.0))
      throw ValidationError("scene: min_visible_frac must lie in (0,1]");
    if (noise.blur_radius < 0.0 || noise.noise_amplitude < 0.0 ||
        noise.noise_cell < 2 || noise.gamma <= 0.0)
      throw ValidationError("scene: depth noise config out of range");
  }
};

struct SceneInstance {
  int index = 0;
  ShapeKind kind = ShapeKind::Ellipse;
  Raster full_mask;    // shape support ignoring occlusion
  Raster visible_mask; // after occlusion; pairwise disjoint within a scene
  Box box;             // tight box of the visible mask
  double band_lo = 0.0, band_hi = 0.0;
};

struct Scene {
  int id = 0;
  Raster image;        // H x W x 3 in [0,1]
  Raster clean_depth;  // synthesized ground-truth depth
  Raster pseudo_depth; // corrupted depth the trainer sees
  std::vector<SceneInstance> instances;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

/// Rasterizes one shape at pixel centers. (cx,cy) center, a/b semi-axes
/// (a >= b), theta rotation. Capsules are a segment of half-length (a-b)
/// swept by radius b.
inline Raster rasterize_shape(ShapeKind kind, double cx, double cy, double a,
                              double b, double theta, int H, int W) {
  Raster m(H, W, 1);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = dx * ct + dy * st;   // along the major axis
      const double w = -dx * st + dy * ct;  // across
      bool in = false;
      switch (kind) {
        case ShapeKind::Ellipse:
          in = (u / a) * (u / a) + (w / b) * (w / b) <= 1.0;
          break;
        case ShapeKind::Rectangle:
          in = std::abs(u) <= a && std::abs(w) <= b;
          break;
        case ShapeKind::Capsule: {
          const double half = std::max(0.0, a - b);
          const double uu = std::clamp(u, -half, half);
          const double du = u - uu;
          in = du * du + w * w <= b * b;
          break;
        }
      }
      if (in) m.at(y, x) = 1.0;
    }
  return m;
}

/// Planar depth ramp across a mask: project each mask pixel onto a random
/// direction, normalize the projection span to [0,1], map into the band.
/// Also returns the normalized ramp (for shading) via t_out.
inline void paint_depth_ramp(const Raster& mask, double lo, double hi,
                             double dir, Raster& depth, Raster* t_out) {
  const double cd = std::cos(dir), sd = std::sin(dir);
  double pmin = 1e300, pmax = -1e300;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) > 0.5) {
        const double pr = x * cd + y * sd;
        pmin = std::min(pmin, pr);
        pmax = std::max(pmax, pr);
      }
  const double span = pmax > pmin ? pmax - pmin : 1.0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) > 0.5) {
        const double t = (x * cd + y * sd - pmin) / span;
        depth.at(y, x) = lo + t * (hi - lo);
        if (t_out) t_out->at(y, x) = t;
      }
}

} // namespace detail

/// Degrades a clean depth map the way a cheap monocular estimate would:
/// gaussian blur (sigma = radius/2, halfwidth = ceil(radius)), additive
/// low-frequency noise (bilinear upsample of a coarse lattice of uniform
/// values in [-amp, amp]), then a monotone gamma remap. Values are
/// renormalized to [0,1] only if the pipeline pushed them outside; a
/// config with radius 0, amplitude 0, gamma 1 is the identity.
inline Raster corrupt_depth(const Raster& depth, const DepthNoiseConfig& cfg, Rng rng) {
  if (depth.channels != 1)
    throw ValidationError("corrupt_depth: expected single-channel raster");
  const int H = depth.height, W = depth.width;
  Raster out = depth;

  if (cfg.blur_radius > 0.0) {
    const int hw = static_cast<int>(std::ceil(cfg.blur_radius));
    const double sigma = cfg.blur_radius / 2.0;
    std::vector<double> kern(2 * hw + 1);
    double ks = 0.0;
    for (int i = -hw; i <= hw; ++i) {
      kern[i + hw] = std::exp(-(i * i) / (2.0 * sigma * sigma));
      ks += kern[i + hw];
    }
    for (double& v : kern) v /= ks;
    Raster tmp(H, W, 1);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = -hw; i <= hw; ++i) {
          const int xx = std::clamp(x + i, 0, W - 1);
          s += kern[i + hw] * out.at(y, xx);
        }
        tmp.at(y, x) = s;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0.0;
        for (int i = -hw; i <= hw; ++i) {
          const int yy = std::clamp(y + i, 0, H - 1);
          s += kern[i + hw] * tmp.at(yy, x);
        }
        out.at(y, x) = s;
      }
  }

  if (cfg.noise_amplitude > 0.0) {
    const int cell = cfg.noise_cell;
    const int ny = (H - 1) / cell + 2, nx = (W - 1) / cell + 2;
    std::vector<double> node(static_cast<std::size_t>(ny) * nx);
    for (double& v : node) v = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
    for (int y = 0; y < H; ++y) {
      const int j = y / cell;
      const double ty = static_cast<double>(y - j * cell) / cell;
      for (int x = 0; x < W; ++x) {
        const int i = x / cell;
        const double tx = static_cast<double>(x - i * cell) / cell;
        const double v00 = node[static_cast<std::size_t>(j) * nx + i];
        const double v01 = node[static_cast<std::size_t>(j) * nx + i + 1];
        const double v10 = node[static_cast<std::size_t>(j + 1) * nx + i];
        const double v11 = node[static_cast<std::size_t>(j + 1) * nx + i + 1];
        const double top = v00 + (v01 - v00) * tx;
        const double bot = v10 + (v11 - v10) * tx;
        out.at(y, x) += top + (bot - top) * ty;
      }
    }
  }

  if (cfg.gamma != 1.0) {
    // pow is undefined below zero; noise can dip slightly negative.
    for (double& v : out.data) v = std::pow(v < 0.0 ? 0.0 : v, cfg.gamma);
  }

  double mn = 1e300, mx = -1e300;
  for (double v : out.data) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mn < 0.0 || mx > 1.0) {
    if (mx - mn > 1e-12)
      for (double& v : out.data) v = (v - mn) / (mx - mn);
    else
      for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

/// Generates one scene. Pure function of (config, seed, scene_index):
/// calling it twice yields identical scenes.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed, int scene_index) {
  cfg.validate();
  const int H = cfg.height, W = cfg.width;
  Rng rng = Rng::stream(seed, StreamTag::SceneLayout, static_cast<std::uint64_t>(scene_index));

  const auto fail = [&](const std::string& why) {
    throw ValidationError("generate_scene: " + why + " (seed=" + std::to_string(seed) +
                          ", scene=" + std::to_string(scene_index) + ")");
  };

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);

    // -- background ------------------------------------------------------
    double bg_rgb[3];
    for (double& c : bg_rgb) c = rng.uniform(0.35, 0.65);
    const double bg_lo = rng.uniform(0.02, 0.06);
    const double bg_hi = bg_lo + rng.uniform(0.06, 0.12);
    const double bg_dir = rng.uniform(0.0, 6.283185307179586);
    Raster depth(H, W, 1);
    {
      const double cd = std::cos(bg_dir), sd = std::sin(bg_dir);
      double pmin = 1e300, pmax = -1e300;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double pr = x * cd + y * sd;
          pmin = std::min(pmin, pr);
          pmax = std::max(pmax, pr);
        }
      const double span = pmax > pmin ? pmax - pmin : 1.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double t = (x * cd + y * sd - pmin) / span;
          depth.at(y, x) = bg_lo + t * (bg_hi - bg_lo);
        }
    }
    Raster image(H, W, 3);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double shade = 0.92 + 0.16 * (depth.at(y, x) - bg_lo) / std::max(1e-9, bg_hi - bg_lo);
        for (int c = 0; c < 3; ++c)
          image.at(y, x, c) = std::clamp(bg_rgb[c] * shade, 0.0, 1.0);
      }

    // -- depth bands, one per object, separated --------------------------
    std::vector<double> centers(n);
    if (n > 0) {
      const double lo = cfg.band_lo + cfg.band_width / 2;
      const double hi = cfg.band_hi - cfg.band_width / 2;
      const double min_gap = cfg.band_width + cfg.band_gap;
      bool ok = false;
      for (int t = 0; t < 40 && !ok; ++t) {
        for (double& c : centers) c = rng.uniform(lo, hi);
        std::sort(centers.begin(), centers.end());
        ok = true;
        for (int i = 1; i < n; ++i)
          if (centers[i] - centers[i - 1] < min_gap) ok = false;
      }
      if (!ok) // deterministic fallback: even spacing (config validated to fit)
        for (int i = 0; i < n; ++i)
          centers[i] = n == 1 ? (lo + hi) / 2 : lo + i * (hi - lo) / (n - 1);
      // Random band-to-object assignment so depth order is independent of
      // placement order.
      for (int i = n - 1; i > 0; --i)
        std::swap(centers[i], centers[rng.uniform_int(0, i)]);
    }

    // -- object colors ----------------------------------------------------
    const double hue0 = rng.uniform(0.0, 1.0);
    std::vector<std::array<double, 3>> colors(n);
    for (int k = 0; k < n; ++k) {
      const double s = rng.uniform(0.55, 0.8);
      const double v = rng.uniform(0.55, 0.85);
      double c[3];
      detail::hsv_to_rgb(hue0 + k * 0.3819660112501051, s, v, c);
      for (int j = 0; j < 3; ++j)
        colors[k][j] = (1.0 - cfg.camouflage) * c[j] + cfg.camouflage * bg_rgb[j];
    }

    // -- place shapes ------------------------------------------------------
    struct Placed {
      ShapeKind kind;
      Raster mask;
      Box bbox;
      double ramp_dir;
    };
    std::vector<Placed> placed;
    bool placement_failed = false;
    for (int k = 0; k < n; ++k) {
      bool done = false;
      for (int t = 0; t < cfg.max_retries && !done; ++t) {
        const ShapeKind kind = static_cast<ShapeKind>(rng.uniform_int(1, 3));
        const double a = rng.uniform(cfg.min_size_frac, cfg.max_size_frac) *
                         std::min(H, W) / 2.0;
        double b = a * rng.uniform(0.45, 0.85);
        if (kind == ShapeKind::Capsule) b = std::min(b, a / 1.3);
        const double theta = rng.uniform(0.0, 3.141592653589793);
        const double margin = a + 2.0;
        if (2 * margin >= std::min(H, W) - 2) continue;
        const double cx = rng.uniform(margin, W - 1 - margin);
        const double cy = rng.uniform(margin, H - 1 - margin);
        Raster m = detail::rasterize_shape(kind, cx, cy, a, b, theta, H, W);
        const Box bb = mask_bbox(m);
        long px = 0;
        for (double v : m.data) px += v > 0.5;
        if (px < 25 || bb.empty()) continue;
        if (!cfg.allow_overlap) {
          bool clash = false;
          for (const auto& q : placed) {
            const Box pad{q.bbox.x0 - 2, q.bbox.y0 - 2, q.bbox.x1 + 2, q.bbox.y1 + 2};
            if (box_overlap(pad, bb)) {
              clash = true;
              break;
            }
          }
          if (clash) continue;
        }
        placed.push_back({kind, std::move(m), bb, rng.uniform(0.0, 6.283185307179586)});
        done = true;
      }
      if (!done) {
        placement_failed = true;
        break;
      }
    }
    if (placement_failed) {
      if (attempt + 1 == cfg.max_retries) fail("could not place objects under constraints");
      continue;
    }

    // -- paint far to near -------------------------------------------------
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return centers[a] < centers[b]; });

    // Distractors: image-only blobs in object-like colors; their depth
    // stays background, so color affinity misleads where depth does not.
    if (cfg.distractors && n > 0) {
      const int nd = rng.uniform_int(2, 4);
      for (int d = 0; d < nd; ++d) {
        const double a = rng.uniform(0.10, 0.26) * std::min(H, W) / 2.0;
        const double b = a * rng.uniform(0.5, 0.9);
        const double th = rng.uniform(0.0, 3.141592653589793);
        const double cx = rng.uniform(a, W - 1 - a);
        const double cy = rng.uniform(a, H - 1 - a);
        const int src = rng.uniform_int(0, n - 1);
        double jit[3];
        for (double& j : jit) j = rng.uniform(-0.04, 0.04);
        Raster m = detail::rasterize_shape(ShapeKind::Ellipse, cx, cy, a, b, th, H, W);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            if (m.at(y, x) > 0.5)
              for (int c = 0; c < 3; ++c)
                image.at(y, x, c) = std::clamp(colors[src][c] + jit[c], 0.0, 1.0);
      }
    }

    Raster owner(H, W, 1, -1.0);
    std::vector<Raster> ramps(n);
    for (int oi : order) {
      const auto& pl = placed[oi];
      ramps[oi] = Raster(H, W, 1);
      const double lo = centers[oi] - cfg.band_width / 2;
      const double hi = centers[oi] + cfg.band_width / 2;
      detail::paint_depth_ramp(pl.mask, lo, hi, pl.ramp_dir, depth, &ramps[oi]);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (pl.mask.at(y, x) > 0.5) {
            owner.at(y, x) = oi;
            const double shade = 0.86 + 0.26 * ramps[oi].at(y, x);
            for (int c = 0; c < 3; ++c)
              image.at(y, x, c) = std::clamp(colors[oi][c] * shade, 0.0, 1.0);
          }
    }

    if (cfg.color_noise > 0.0)
      for (double& v : image.data)
        v = std::clamp(v + rng.uniform(-cfg.color_noise, cfg.color_noise), 0.0, 1.0);

    // -- visibility check --------------------------------------------------
    std::vector<long> full_px(n, 0), vis_px(n, 0);
    for (int k = 0; k < n; ++k)
      for (double v : placed[k].mask.data) full_px[k] += v > 0.5;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int o = static_cast<int>(owner.at(y, x));
        if (o >= 0) ++vis_px[o];
      }
    bool visible_ok = true;
    for (int k = 0; k < n; ++k)
      if (vis_px[k] < 16 || vis_px[k] < cfg.min_visible_frac * full_px[k])
        visible_ok = false;
    if (!visible_ok) {
      if (attempt + 1 == cfg.max_retries) fail("occlusion left an object too small");
      continue;
    }

    // -- assemble ----------------------------------------------------------
    Scene s;
    s.id = scene_index;
    s.image = std::move(image);
    s.clean_depth = depth;
    s.pseudo_depth = corrupt_depth(
        depth, cfg.noise,
        Rng::stream(seed, StreamTag::DepthNoise, static_cast<std::uint64_t>(scene_index)));
    s.instances.resize(n);
    for (int k = 0; k < n; ++k) {
      SceneInstance& inst = s.instances[k];
      inst.index = k;
      inst.kind = placed[k].kind;
      inst.full_mask = std::move(placed[k].mask);
      inst.visible_mask = Raster(H, W, 1);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (static_cast<int>(owner.at(y, x)) == k) inst.visible_mask.at(y, x) = 1.0;
      inst.box = mask_bbox(inst.visible_mask);
      inst.band_lo = centers[k] - cfg.band_width / 2;
      inst.band_hi = centers[k] + cfg.band_width / 2;
      if (inst.box.empty()) fail("internal: visible instance lost its box");
    }
    return s;
  }
  fail("retries exhausted");
  return {}; // unreachable
}

} // namespace dgseg
