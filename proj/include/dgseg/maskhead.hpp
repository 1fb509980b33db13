#pragma once

// Depth-guided dynamic mask head: a tiny per-instance MLP applied at every
// pixel (equivalently, a stack of 1x1 convolutions whose weights are unique
// to the instance).
//
// Per pixel, with input x (10 channels):
//
//   a1 = W1 x + b1            (8 units)      h1 = relu(a1)
//   a2 = W2 h1 + b2           (8 units)      h2 = relu(a2)
//   depth_logit = Wd h2 + bd                 depth = sigmoid(depth_logit)
//   mask_logit  = Wm h2 + bm
//   mask = sigmoid(mask_logit * depth)
//
// The predicted depth multiplies the mask logit *before* its sigmoid. Since
// depth = sigmoid(...) > 0, this rescaling never flips the side of 0.5 the
// mask probability lands on -- depth modulates confidence, not the decision.
// It does create a gradient path from the mask losses into the depth branch
// (and from there into the shared trunk), which the backward pass below
// carries explicitly.
//
// Parameters live in one flat array of 178 doubles:
//   [ W1 80 | b1 8 | W2 64 | b2 8 | Wd 8 | bd 1 | Wm 8 | bm 1 ]
// with weights output-major: W[o * in + i].

#include <array>
#include <cmath>
#include <cstddef>

#include "dgseg/errors.hpp"
#include "dgseg/features.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

constexpr int kHiddenUnits = 8;
constexpr int kOffW1 = 0;
constexpr int kOffB1 = kOffW1 + kHiddenUnits * kHeadInputChannels; // 80
constexpr int kOffW2 = kOffB1 + kHiddenUnits;                      // 88
constexpr int kOffB2 = kOffW2 + kHiddenUnits * kHiddenUnits;       // 152
constexpr int kOffWd = kOffB2 + kHiddenUnits;                      // 160
constexpr int kOffBd = kOffWd + kHiddenUnits;                      // 168
constexpr int kOffWm = kOffBd + 1;                                 // 169
constexpr int kOffBm = kOffWm + kHiddenUnits;                      // 177
constexpr int kParamCount = kOffBm + 1;                            // 178

struct HeadParams {
  std::array<double, kParamCount> v{};

  double* w1() { return v.data() + kOffW1; }
  double* b1() { return v.data() + kOffB1; }
  double* w2() { return v.data() + kOffW2; }
  double* b2() { return v.data() + kOffB2; }
  double* wd() { return v.data() + kOffWd; }
  double* wm() { return v.data() + kOffWm; }
  const double* w1() const { return v.data() + kOffW1; }
  const double* b1() const { return v.data() + kOffB1; }
  const double* w2() const { return v.data() + kOffW2; }
  const double* b2() const { return v.data() + kOffB2; }
  const double* wd() const { return v.data() + kOffWd; }
  const double* wm() const { return v.data() + kOffWm; }
  double& bd() { return v[kOffBd]; }
  double& bm() { return v[kOffBm]; }
  double bd() const { return v[kOffBd]; }
  double bm() const { return v[kOffBm]; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Forward outputs plus the activations the backward pass needs.
struct HeadResult {
  Raster mask_prob;   // sigmoid(mask_logit * depth), 1 channel
  Raster depth_pred;  // sigmoid(depth_logit), 1 channel
  // backward cache (populated when keep_cache is set)
  bool has_cache = false;
  Raster input;       // 10 channels
  Raster act1;        // pre-ReLU layer-1 activations, 8 channels
  Raster act2;        // pre-ReLU layer-2 activations, 8 channels
  Raster mask_logit;  // 1 channel (needed for the mask->depth cross term)
};

/// Evaluates the head at every pixel. Accumulation order is fixed, so the
/// result is bit-identical across runs and thread counts.
inline HeadResult head_forward(const Raster& input, const HeadParams& p,
                               bool keep_cache = true) {
  if (input.channels != kHeadInputChannels)
    throw ValidationError("head_forward: input must have 10 channels");
  if (!p.all_finite())
    throw NumericError("head_forward: non-finite parameters");

  const int H = input.height, W = input.width, N = H * W;
  HeadResult r;
  r.mask_prob = Raster(H, W, 1);
  r.depth_pred = Raster(H, W, 1);
  if (keep_cache) {
    r.has_cache = true;
    r.input = input;
    r.act1 = Raster(H, W, kHiddenUnits);
    r.act2 = Raster(H, W, kHiddenUnits);
    r.mask_logit = Raster(H, W, 1);
  }

  const double* W1 = p.w1();
  const double* B1 = p.b1();
  const double* W2 = p.w2();
  const double* B2 = p.b2();
  const double* Wd = p.wd();
  const double* Wm = p.wm();
  const double bd = p.bd(), bm = p.bm();

  double a1[kHiddenUnits], h1[kHiddenUnits], a2[kHiddenUnits], h2[kHiddenUnits];
  for (int n = 0; n < N; ++n) {
    const double* x = input.data.data() + static_cast<std::size_t>(n) * kHeadInputChannels;
    for (int o = 0; o < kHiddenUnits; ++o) {
      double s = B1[o];
      const double* w = W1 + o * kHeadInputChannels;
      for (int i = 0; i < kHeadInputChannels; ++i) s += w[i] * x[i];
      a1[o] = s;
      h1[o] = s > 0.0 ? s : 0.0;
    }
    for (int o = 0; o < kHiddenUnits; ++o) {
      double s = B2[o];
      const double* w = W2 + o * kHiddenUnits;
      for (int i = 0; i < kHiddenUnits; ++i) s += w[i] * h1[i];
      a2[o] = s;
      h2[o] = s > 0.0 ? s : 0.0;
    }
    double dl = bd, ml = bm;
    for (int i = 0; i < kHiddenUnits; ++i) {
      dl += Wd[i] * h2[i];
      ml += Wm[i] * h2[i];
    }
    const double depth = stable_sigmoid(dl);
    r.depth_pred.data[n] = depth;
    r.mask_prob.data[n] = stable_sigmoid(ml * depth);
    if (keep_cache) {
      for (int o = 0; o < kHiddenUnits; ++o) {
        r.act1.data[static_cast<std::size_t>(n) * kHiddenUnits + o] = a1[o];
        r.act2.data[static_cast<std::size_t>(n) * kHiddenUnits + o] = a2[o];
      }
      r.mask_logit.data[n] = ml;
    }
  }
  return r;
}

/// Backpropagates per-pixel loss gradients -- d_mask w.r.t. the mask
/// probability, d_depth w.r.t. the depth prediction -- to the 178
/// parameters. `p` must be the same parameters the forward pass ran with.
///
/// The multiplicative coupling contributes two terms at the output:
///
///   u = mask_logit * depth,  m = sigmoid(u),  du = d_mask * m(1-m)
///   d(mask_logit) = du * depth
///   d(depth)     += du * mask_logit            <- cross term
///
/// so mask supervision reaches the depth branch even when d_depth is all
/// zeros. Both then flow through sigmoid'/relu' into the shared trunk.
inline HeadParams head_backward(const HeadResult& fwd, const HeadParams& p,
                                const Raster& d_mask, const Raster& d_depth) {
  if (!fwd.has_cache)
    throw ValidationError("head_backward: forward pass was run without cache");
  if (!d_mask.same_shape(fwd.mask_prob) || !d_depth.same_shape(fwd.depth_pred))
    throw ValidationError("head_backward: gradient shape mismatch");

  const int N = fwd.mask_prob.pixels();
  HeadParams g;
  double* gW1 = g.w1();
  double* gB1 = g.b1();
  double* gW2 = g.w2();
  double* gB2 = g.b2();
  double* gWd = g.wd();
  double* gWm = g.wm();
  double gbd = 0.0, gbm = 0.0;

  const double* W2 = p.w2();
  const double* Wd = p.wd();
  const double* Wm = p.wm();

  double h1[kHiddenUnits], h2[kHiddenUnits];
  double dh2[kHiddenUnits], da2[kHiddenUnits], dh1[kHiddenUnits];

  for (int n = 0; n < N; ++n) {
    const double dm = d_mask.data[n];
    const double dd_ext = d_depth.data[n];
    if (dm == 0.0 && dd_ext == 0.0) continue;

    const double* x = fwd.input.data.data() + static_cast<std::size_t>(n) * kHeadInputChannels;
    const double* a1 = fwd.act1.data.data() + static_cast<std::size_t>(n) * kHiddenUnits;
    const double* a2 = fwd.act2.data.data() + static_cast<std::size_t>(n) * kHiddenUnits;
    for (int i = 0; i < kHiddenUnits; ++i) {
      h1[i] = a1[i] > 0.0 ? a1[i] : 0.0;
      h2[i] = a2[i] > 0.0 ? a2[i] : 0.0;
    }

    const double m = fwd.mask_prob.data[n];
    const double depth = fwd.depth_pred.data[n];
    const double ml = fwd.mask_logit.data[n];

    const double du = dm * m * (1.0 - m);          // d/d(mask_logit*depth)
    const double dml = du * depth;                 // -> mask logit
    const double ddp = dd_ext + du * ml;           // -> depth pred (+cross)
    const double ddl = ddp * depth * (1.0 - depth); // -> depth logit

    gbm += dml;
    gbd += ddl;
    for (int i = 0; i < kHiddenUnits; ++i) {
      gWm[i] += dml * h2[i];
      gWd[i] += ddl * h2[i];
      dh2[i] = dml * Wm[i] + ddl * Wd[i];
      da2[i] = a2[i] > 0.0 ? dh2[i] : 0.0;
    }
    for (int i = 0; i < kHiddenUnits; ++i) dh1[i] = 0.0;
    for (int o = 0; o < kHiddenUnits; ++o) {
      if (da2[o] == 0.0) continue;
      gB2[o] += da2[o];
      double* gw = gW2 + o * kHiddenUnits;
      const double* w = W2 + o * kHiddenUnits;
      for (int i = 0; i < kHiddenUnits; ++i) {
        gw[i] += da2[o] * h1[i];
        dh1[i] += da2[o] * w[i];
      }
    }
    for (int o = 0; o < kHiddenUnits; ++o) {
      const double da1 = a1[o] > 0.0 ? dh1[o] : 0.0;
      if (da1 == 0.0) continue;
      gB1[o] += da1;
      double* gw = gW1 + o * kHeadInputChannels;
      for (int i = 0; i < kHeadInputChannels; ++i) gw[i] += da1 * x[i];
    }
  }
  g.bd() = gbd;
  g.bm() = gbm;
  return g;
}

} // namespace dgseg
