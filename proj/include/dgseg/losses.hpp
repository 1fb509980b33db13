#pragma once

// Loss terms for box-supervised mask training, each returning its value and
// an analytic gradient raster. All of them are verified against central
// finite differences in the test suite; keep any change here in sync with
// those checks.
//
// Terms:
//   * projection      -- dice between the mask's row/column maxima and the
//                        box's row/column indicators (box supervision).
//   * pairwise        -- -log P(same label) on similar neighbor pairs, used
//                        twice: color similarity and pseudo-depth similarity.
//   * instance depth  -- MSE between predicted depth and pseudo-depth over
//                        the annotated box.
//   * dice            -- soft dice against a binary target (distillation).

#include <cmath>
#include <vector>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

constexpr double kDiceEps = 1e-6;
constexpr double kProbEps = 1e-12;

struct MaskLoss {
  double value = 0.0;
  Raster d_mask; // dL/d(mask probability), same shape as the mask
};

struct DepthLoss {
  double value = 0.0;
  Raster d_depth;
};

/// Per-edge and per-pixel similarity of a scalar field under s = exp(-k|dv|).
/// The pixel value is the mean similarity of all edges incident to that
/// pixel; a pixel with no incident edges (possible only on degenerate
/// rasters) gets the neutral value 1.
struct FieldSimilarity {
  std::vector<double> edge;  // parallel to graph.edges
  std::vector<double> pixel; // one per pixel
};

inline FieldSimilarity depth_similarity(const Raster& depth, const EdgeGraph& g,
                                        double k) {
  if (depth.channels != 1)
    throw ValidationError("depth_similarity: expected single-channel raster");
  if (depth.pixels() != g.height * g.width || depth.height != g.height)
    throw ValidationError("depth_similarity: raster/graph shape mismatch");
  FieldSimilarity s;
  s.edge.resize(g.edges.size());
  s.pixel.assign(static_cast<std::size_t>(depth.pixels()), 0.0);
  std::vector<int> deg(static_cast<std::size_t>(depth.pixels()), 0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [a, b] = g.edges[e];
    const double sim = std::exp(-k * std::abs(depth.data[a] - depth.data[b]));
    s.edge[e] = sim;
    s.pixel[a] += sim;
    s.pixel[b] += sim;
    ++deg[a];
    ++deg[b];
  }
  for (std::size_t p = 0; p < s.pixel.size(); ++p)
    s.pixel[p] = deg[p] > 0 ? s.pixel[p] / deg[p] : 1.0;
  return s;
}

/// Per-edge color affinity: exp(-||c_a - c_b||_2 / theta) over the image's
/// channels (Euclidean in color space).
inline std::vector<double> color_similarity(const Raster& image, const EdgeGraph& g,
                                            double theta) {
  if (image.pixels() != g.height * g.width || image.height != g.height)
    throw ValidationError("color_similarity: raster/graph shape mismatch");
  if (theta <= 0.0) throw ValidationError("color_similarity: theta must be positive");
  std::vector<double> sim(g.edges.size());
  const int C = image.channels;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [a, b] = g.edges[e];
    double d2 = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = image.data[static_cast<std::size_t>(a) * C + c] -
                       image.data[static_cast<std::size_t>(b) * C + c];
      d2 += d * d;
    }
    sim[e] = std::exp(-std::sqrt(d2) / theta);
  }
  return sim;
}

/// Pairwise label-consistency loss. An edge (a,b) qualifies when its
/// similarity strictly exceeds tau and both endpoints lie in the region
/// mask. For qualifying edges,
///
///   P(same) = m_a m_b + (1-m_a)(1-m_b)
///   L = -mean log P(same)
///
/// Probabilities are clamped to [1e-12, 1-1e-12] inside the log; clamped
/// pixels get zero gradient. With no qualifying edges the loss is 0 with a
/// zero gradient (not an error: a similarity threshold may legitimately
/// exclude everything).
inline MaskLoss loss_pairwise(const Raster& mask, const std::vector<double>& edge_sim,
                              const EdgeGraph& g, double tau, const Raster& region) {
  if (mask.channels != 1 || region.channels != 1)
    throw ValidationError("loss_pairwise: mask and region must be single-channel");
  if (mask.pixels() != g.height * g.width || !mask.same_shape(region) ||
      mask.height != g.height)
    throw ValidationError("loss_pairwise: shape mismatch");
  if (edge_sim.size() != g.edges.size())
    throw ValidationError("loss_pairwise: similarity/edge count mismatch");

  MaskLoss out;
  out.d_mask = Raster(mask.height, mask.width, 1);
  long count = 0;
  double acc = 0.0;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (!(edge_sim[e] > tau)) continue;
    const auto [a, b] = g.edges[e];
    if (region.data[a] <= 0.5 || region.data[b] <= 0.5) continue;
    ++count;
    const double ra = mask.data[a], rb = mask.data[b];
    const bool ca = ra < kProbEps || ra > 1.0 - kProbEps;
    const bool cb = rb < kProbEps || rb > 1.0 - kProbEps;
    const double ma = ca ? (ra < 0.5 ? kProbEps : 1.0 - kProbEps) : ra;
    const double mb = cb ? (rb < 0.5 ? kProbEps : 1.0 - kProbEps) : rb;
    const double py1 = ma * mb + (1.0 - ma) * (1.0 - mb);
    acc -= std::log(py1);
    if (!ca) out.d_mask.data[a] -= (2.0 * mb - 1.0) / py1;
    if (!cb) out.d_mask.data[b] -= (2.0 * ma - 1.0) / py1;
  }
  if (count == 0) return out; // value 0, zero gradient
  out.value = acc / count;
  const double inv = 1.0 / count;
  for (double& v : out.d_mask.data) v *= inv;
  return out;
}

/// Mean squared error between predicted depth and the pseudo-depth target
/// over the box's pixel region. A box whose pixel region is empty is a
/// dataset error.
inline DepthLoss loss_instance_depth(const Raster& depth_pred, const Raster& target,
                                     const Box& box) {
  if (!depth_pred.same_shape(target) || depth_pred.channels != 1)
    throw ValidationError("loss_instance_depth: shape mismatch");
  const PixelRect r = pixel_rect(box, depth_pred.height, depth_pred.width);
  if (r.empty())
    throw ValidationError("loss_instance_depth: box covers no pixels");
  DepthLoss out;
  out.d_depth = Raster(depth_pred.height, depth_pred.width, 1);
  const double inv = 1.0 / r.area();
  double acc = 0.0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double e = depth_pred.at(y, x) - target.at(y, x);
      acc += e * e;
      out.d_depth.at(y, x) = 2.0 * e * inv;
    }
  out.value = acc * inv;
  return out;
}

namespace detail {

// Soft dice between a prediction vector and a binary target vector:
// L = 1 - 2<p,t> / (|p|^2 + |t|^2 + eps). Returns the value; writes
// dL/dp into dp (same length).
inline double dice_vec(const std::vector<double>& p, const std::vector<double>& t,
                       std::vector<double>& dp) {
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pt += p[i] * t[i];
    pp += p[i] * p[i];
    tt += t[i] * t[i];
  }
  const double N = 2.0 * pt;
  const double D = pp + tt + kDiceEps;
  dp.resize(p.size());
  const double invD2 = 1.0 / (D * D);
  for (std::size_t i = 0; i < p.size(); ++i)
    dp[i] = (2.0 * N * p[i] - 2.0 * D * t[i]) * invD2;
  return 1.0 - N / D;
}

} // namespace detail

/// Box-projection loss: the mask's row-wise and column-wise maxima should
/// match the box's row/column indicator functions. Maxima are hard; each
/// row/column routes its gradient to the lowest-index argmax pixel, so the
/// loss is piecewise differentiable (ties move the gradient between pixels,
/// which the finite-difference tests avoid by construction).
inline MaskLoss loss_projection(const Raster& mask, const Box& box) {
  if (mask.channels != 1)
    throw ValidationError("loss_projection: expected single-channel mask");
  const int H = mask.height, W = mask.width;
  const PixelRect r = pixel_rect(box, H, W);

  std::vector<double> rmax(H, 0.0), cmax(W, 0.0);
  std::vector<int> rarg(H, 0), carg(W, 0);
  for (int y = 0; y < H; ++y) {
    double best = -1.0;
    int bx = 0;
    for (int x = 0; x < W; ++x) {
      const double v = mask.at(y, x);
      if (v > best) {
        best = v;
        bx = x;
      }
    }
    rmax[y] = best;
    rarg[y] = bx;
  }
  for (int x = 0; x < W; ++x) {
    double best = -1.0;
    int by = 0;
    for (int y = 0; y < H; ++y) {
      const double v = mask.at(y, x);
      if (v > best) {
        best = v;
        by = y;
      }
    }
    cmax[x] = best;
    carg[x] = by;
  }

  std::vector<double> rt(H, 0.0), ct(W, 0.0);
  for (int y = r.y0; y < r.y1; ++y) rt[y] = 1.0;
  for (int x = r.x0; x < r.x1; ++x) ct[x] = 1.0;

  std::vector<double> drow, dcol;
  MaskLoss out;
  out.value = detail::dice_vec(rmax, rt, drow) + detail::dice_vec(cmax, ct, dcol);
  out.d_mask = Raster(H, W, 1);
  for (int y = 0; y < H; ++y) out.d_mask.at(y, rarg[y]) += drow[y];
  for (int x = 0; x < W; ++x) out.d_mask.at(carg[x], x) += dcol[x];
  return out;
}

/// Soft dice against a binary target mask over the whole raster.
inline MaskLoss loss_dice(const Raster& mask, const Raster& target) {
  if (!mask.same_shape(target) || mask.channels != 1)
    throw ValidationError("loss_dice: shape mismatch");
  std::vector<double> dp;
  MaskLoss out;
  out.value = detail::dice_vec(mask.data, target.data, dp);
  out.d_mask = Raster(mask.height, mask.width, 1);
  out.d_mask.data = std::move(dp);
  return out;
}

/// Scene-level loss bookkeeping, summed over instances.
struct LossTerms {
  double projection = 0.0;
  double pairwise_color = 0.0;
  double pairwise_depth = 0.0;
  double instance_depth = 0.0;
  double distill_dice = 0.0;

  bool all_finite() const {
    return std::isfinite(projection) && std::isfinite(pairwise_color) &&
           std::isfinite(pairwise_depth) && std::isfinite(instance_depth) &&
           std::isfinite(distill_dice);
  }
};

/// Total training objective. The dice term enters only in the distillation
/// phase, weighted by gamma; every other term is always on (ablations zero
/// them upstream by skipping the computation).
inline double total_loss(const LossTerms& t, bool distill_phase, double gamma) {
  double v = t.projection + t.pairwise_color + t.pairwise_depth + t.instance_depth;
  if (distill_phase) v += gamma * t.distill_dice;
  return v;
}

} // namespace dgseg
