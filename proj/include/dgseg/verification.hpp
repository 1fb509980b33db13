#pragma once

// Production gradient verification: every analytic gradient the trainer
// uses, checked against central finite differences on randomized small
// problems. Exposed through the CLI (`dgseg gradcheck`) so a build on a new
// platform can be validated in seconds.
//
// Case construction avoids the two legitimate non-differentiabilities
// instead of tolerating error from them:
//   * projection maxima -- cases require every row/column top-two gap to
//     exceed 1e-3, far above the 1e-5 probe step, so no argmax can flip;
//   * ReLU kinks -- composite cases require every pre-activation magnitude
//     to exceed 1e-4.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dgseg/features.hpp"
#include "dgseg/gradcheck.hpp"
#include "dgseg/losses.hpp"
#include "dgseg/maskhead.hpp"
#include "dgseg/raster.hpp"
#include "dgseg/rng.hpp"

namespace dgseg {

struct VerifyConfig {
  int cases = 100;           // per term
  int probes = 12;           // coordinates checked per case
  std::uint64_t seed = 11;
  GradCheckSettings fd;      // step 1e-5, atol 1e-8, rtol 1e-4
};

namespace detail {

inline Raster random_raster(Rng& rng, int h, int w, int c, double lo, double hi) {
  Raster r(h, w, c);
  for (double& v : r.data) v = rng.uniform(lo, hi);
  return r;
}

inline std::vector<int> sample_indices(Rng& rng, int n, int count) {
  std::vector<int> idx;
  for (int i = 0; i < count; ++i) idx.push_back(rng.uniform_int(0, n - 1));
  return idx;
}

inline Box random_box(Rng& rng, int h, int w) {
  const int x0 = rng.uniform_int(0, w - 3);
  const int y0 = rng.uniform_int(0, h - 3);
  const int x1 = rng.uniform_int(x0 + 2, w);
  const int y1 = rng.uniform_int(y0 + 2, h);
  return Box{static_cast<double>(x0), static_cast<double>(y0),
             static_cast<double>(x1), static_cast<double>(y1)};
}

/// Largest mask value that is within `margin` of its row or column max
/// without being the max would break the FD probe; require a clear gap.
inline bool projection_safe(const Raster& mask, double margin) {
  const int H = mask.height, W = mask.width;
  for (int y = 0; y < H; ++y) {
    double best = -1, second = -1;
    for (int x = 0; x < W; ++x) {
      const double v = mask.at(y, x);
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    if (best - second < margin) return false;
  }
  for (int x = 0; x < W; ++x) {
    double best = -1, second = -1;
    for (int y = 0; y < H; ++y) {
      const double v = mask.at(y, x);
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    if (best - second < margin) return false;
  }
  return true;
}

} // namespace detail

inline GradCheckReport run_gradient_verification(const VerifyConfig& vc) {
  constexpr int H = 7, W = 9;
  GradCheckReport report;
  Rng rng = Rng::stream(vc.seed, StreamTag::GradCheck);
  const EdgeGraph graph = neighbor_edges(H, W, 1);
  const Raster all_region(H, W, 1, 1.0);

  const auto run_term = [&](const char* name, auto&& make_case) {
    GradCheckEntry entry;
    entry.term = name;
    for (int c = 0; c < vc.cases; ++c) {
      const GradCheckResult r = make_case();
      entry.cases += 1;
      entry.max_rel_err = std::max(entry.max_rel_err, r.max_rel_err);
      if (!r.pass) entry.pass = false;
    }
    report.entries.push_back(entry);
  };

  run_term("pairwise_color", [&] {
    const Raster image = detail::random_raster(rng, H, W, 3, 0.0, 1.0);
    const Raster mask = detail::random_raster(rng, H, W, 1, 0.05, 0.95);
    const std::vector<double> sim = color_similarity(image, graph, 2.0);
    const double tau = rng.uniform(0.2, 0.5);
    const MaskLoss l = loss_pairwise(mask, sim, graph, tau, all_region);
    auto f = [&](const std::vector<double>& x) {
      Raster m = mask;
      m.data = x;
      return loss_pairwise(m, sim, graph, tau, all_region).value;
    };
    return check_gradient(f, mask.data, l.d_mask.data,
                          detail::sample_indices(rng, H * W, vc.probes), vc.fd);
  });

  run_term("pairwise_depth", [&] {
    const Raster depth = detail::random_raster(rng, H, W, 1, 0.0, 1.0);
    const Raster mask = detail::random_raster(rng, H, W, 1, 0.05, 0.95);
    const FieldSimilarity sim = depth_similarity(depth, graph, 8.0);
    const MaskLoss l = loss_pairwise(mask, sim.edge, graph, 0.5, all_region);
    auto f = [&](const std::vector<double>& x) {
      Raster m = mask;
      m.data = x;
      return loss_pairwise(m, sim.edge, graph, 0.5, all_region).value;
    };
    return check_gradient(f, mask.data, l.d_mask.data,
                          detail::sample_indices(rng, H * W, vc.probes), vc.fd);
  });

  run_term("instance_depth", [&] {
    const Raster pred = detail::random_raster(rng, H, W, 1, 0.0, 1.0);
    const Raster target = detail::random_raster(rng, H, W, 1, 0.0, 1.0);
    const Box box = detail::random_box(rng, H, W);
    const DepthLoss l = loss_instance_depth(pred, target, box);
    auto f = [&](const std::vector<double>& x) {
      Raster p = pred;
      p.data = x;
      return loss_instance_depth(p, target, box).value;
    };
    return check_gradient(f, pred.data, l.d_depth.data,
                          detail::sample_indices(rng, H * W, vc.probes), vc.fd);
  });

  run_term("projection", [&] {
    Raster mask(H, W, 1);
    for (int t = 0; t < 200; ++t) {
      mask = detail::random_raster(rng, H, W, 1, 0.02, 0.98);
      if (detail::projection_safe(mask, 1e-3)) break;
    }
    const Box box = detail::random_box(rng, H, W);
    const MaskLoss l = loss_projection(mask, box);
    auto f = [&](const std::vector<double>& x) {
      Raster m = mask;
      m.data = x;
      return loss_projection(m, box).value;
    };
    return check_gradient(f, mask.data, l.d_mask.data,
                          detail::sample_indices(rng, H * W, vc.probes), vc.fd);
  });

  run_term("distill_dice", [&] {
    const Raster mask = detail::random_raster(rng, H, W, 1, 0.02, 0.98);
    Raster target(H, W, 1);
    for (double& v : target.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const MaskLoss l = loss_dice(mask, target);
    auto f = [&](const std::vector<double>& x) {
      Raster m = mask;
      m.data = x;
      return loss_dice(m, target).value;
    };
    return check_gradient(f, mask.data, l.d_mask.data,
                          detail::sample_indices(rng, H * W, vc.probes), vc.fd);
  });

  // Full objective as a function of the head parameters: exercises the
  // backward pass through both sigmoids, both ReLU layers, and the
  // mask-logit-times-depth cross term at once.
  run_term("head_composite", [&] {
    Raster input(H, W, kHeadInputChannels);
    HeadParams params;
    const Box box = detail::random_box(rng, H, W);
    const Raster depth_target = detail::random_raster(rng, H, W, 1, 0.0, 1.0);
    Raster dice_target(H, W, 1);
    for (double& v : dice_target.data) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Raster dimage = detail::random_raster(rng, H, W, 3, 0.0, 1.0);
    const std::vector<double> csim = color_similarity(dimage, graph, 2.0);
    const double gamma = 4.0;

    HeadResult fwd;
    for (int t = 0; t < 200; ++t) {
      for (int p = 0; p < H * W; ++p) {
        for (int c = 0; c < kBaseFeatureChannels; ++c)
          input.data[static_cast<std::size_t>(p) * kHeadInputChannels + c] =
              rng.uniform(0.0, 1.0);
        for (int c = kBaseFeatureChannels; c < kHeadInputChannels; ++c)
          input.data[static_cast<std::size_t>(p) * kHeadInputChannels + c] =
              rng.uniform(-1.0, 1.0);
      }
      for (double& v : params.v) v = rng.uniform(-0.5, 0.5);
      fwd = head_forward(input, params, true);
      double min_act = 1e300;
      for (double a : fwd.act1.data) min_act = std::min(min_act, std::abs(a));
      for (double a : fwd.act2.data) min_act = std::min(min_act, std::abs(a));
      if (min_act > 1e-4 && detail::projection_safe(fwd.mask_prob, 1e-3)) break;
    }

    auto objective = [&](const HeadResult& out) {
      double v = loss_projection(out.mask_prob, box).value;
      v += loss_pairwise(out.mask_prob, csim, graph, 0.3, all_region).value;
      v += loss_instance_depth(out.depth_pred, depth_target, box).value;
      v += gamma * loss_dice(out.mask_prob, dice_target).value;
      return v;
    };

    // Analytic gradient via the chained backward pass.
    Raster d_mask(H, W, 1), d_depth(H, W, 1);
    {
      const MaskLoss proj = loss_projection(fwd.mask_prob, box);
      const MaskLoss pw = loss_pairwise(fwd.mask_prob, csim, graph, 0.3, all_region);
      const DepthLoss dep = loss_instance_depth(fwd.depth_pred, depth_target, box);
      const MaskLoss dice = loss_dice(fwd.mask_prob, dice_target);
      for (int p = 0; p < H * W; ++p) {
        d_mask.data[p] =
            proj.d_mask.data[p] + pw.d_mask.data[p] + gamma * dice.d_mask.data[p];
        d_depth.data[p] = dep.d_depth.data[p];
      }
    }
    const HeadParams analytic = head_backward(fwd, params, d_mask, d_depth);

    auto f = [&](const std::vector<double>& x) {
      HeadParams p;
      for (int i = 0; i < kParamCount; ++i) p.v[i] = x[i];
      return objective(head_forward(input, p, false));
    };
    std::vector<double> x0(params.v.begin(), params.v.end());
    std::vector<double> ga(analytic.v.begin(), analytic.v.end());
    return check_gradient(f, x0, ga,
                          detail::sample_indices(rng, kParamCount, vc.probes), vc.fd);
  });

  return report;
}

} // namespace dgseg
