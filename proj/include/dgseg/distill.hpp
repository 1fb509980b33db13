#pragma once

// Self-distillation: an EMA teacher proposes masks from a lattice of
// anchors, a depth-aware Hungarian matching assigns at most one proposal
// per annotated box, and confident assignments become dice targets for the
// student.
//
// train_step() is the single optimization-step path for both phases. The
// base phase simply passes teacher = nullptr (or gamma = 0): the distill
// branch is then skipped entirely, byte for byte -- there is no separate
// "base step" implementation to drift out of sync.
//
// Per step the teacher sees the scene at its fixed input size while the
// student sees a randomly rescaled copy (the trainer draws the scale);
// pseudo masks are produced at native resolution, matched there, then
// resized to the student's working size.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dgseg/annotations.hpp"
#include "dgseg/errors.hpp"
#include "dgseg/features.hpp"
#include "dgseg/losses.hpp"
#include "dgseg/maskhead.hpp"
#include "dgseg/matching.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

struct TeacherState {
  std::vector<HeadParams> params; // one head per instance
  int input_size = 0;             // square teacher resolution; 0 = native
};

/// teacher <- rate * teacher + (1 - rate) * student, elementwise.
inline void ema_update(TeacherState& teacher, const std::vector<HeadParams>& student,
                       double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ValidationError("ema_update: rate must lie in [0,1)");
  if (teacher.params.size() != student.size())
    throw ValidationError("ema_update: teacher/student head count mismatch");
  for (std::size_t k = 0; k < student.size(); ++k)
    for (int i = 0; i < kParamCount; ++i)
      teacher.params[k].v[i] =
          rate * teacher.params[k].v[i] + (1.0 - rate) * student[k].v[i];
}

/// Anchor lattice of a box: all points with x,y both multiples of `stride`
/// inside the box's pixel rect, plus the rect center when it is off the
/// lattice. Row-major order.
inline std::vector<PixelLoc> anchors_in_box(const Box& box, int stride, int height,
                                            int width) {
  if (stride < 1) throw ValidationError("anchors_in_box: stride must be >= 1");
  const PixelRect r = pixel_rect(box, height, width);
  std::vector<PixelLoc> out;
  if (r.empty()) return out;
  const int fx = (r.x0 + stride - 1) / stride * stride;
  const int fy = (r.y0 + stride - 1) / stride * stride;
  for (int y = fy; y < r.y1; y += stride)
    for (int x = fx; x < r.x1; x += stride) out.push_back({x, y});
  const PixelLoc center{(r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2};
  if (center.x % stride != 0 || center.y % stride != 0 ||
      center.x < fx || center.x >= r.x1 || center.y < fy || center.y >= r.y1)
    out.push_back(center);
  return out;
}

/// Evaluates the teacher at every anchor of every annotated box, at the
/// teacher's fixed input size, and returns native-resolution candidates.
/// Instance k's anchors are evaluated with instance k's teacher head; the
/// pooled list is re-matched globally afterwards, so a head may end up
/// assigned to a different box than it was spawned from.
inline std::vector<Candidate> teacher_candidates(const TrainScene& scene,
                                                 const TeacherState& teacher,
                                                 int stride) {
  if (teacher.params.size() != scene.boxes.size())
    throw ValidationError("teacher_candidates: head count != box count");
  const int H = scene.image.height, W = scene.image.width;
  const int th = teacher.input_size > 0 ? teacher.input_size : H;
  const int tw = teacher.input_size > 0 ? teacher.input_size : W;
  const bool native = (th == H && tw == W);

  const Raster* img = &scene.image;
  Raster resized;
  if (!native) {
    resized = resize_bilinear(scene.image, th, tw);
    img = &resized;
  }
  const Raster base = base_features(*img);
  const double fx = static_cast<double>(tw) / W;
  const double fy = static_cast<double>(th) / H;

  std::vector<Candidate> cands;
  for (std::size_t k = 0; k < scene.boxes.size(); ++k) {
    const Box tb{scene.boxes[k].x0 * fx, scene.boxes[k].y0 * fy,
                 scene.boxes[k].x1 * fx, scene.boxes[k].y1 * fy};
    for (const PixelLoc a : anchors_in_box(tb, stride, th, tw)) {
      const Raster input = head_input(base, a);
      HeadResult out = head_forward(input, teacher.params[k], /*keep_cache=*/false);
      Raster mask = native ? std::move(out.mask_prob)
                           : resize_bilinear(out.mask_prob, H, W);
      Raster depth = native ? std::move(out.depth_pred)
                            : resize_bilinear(out.depth_pred, H, W);
      const PixelLoc anchor_native{
          std::clamp(static_cast<int>(std::llround(a.x / fx)), 0, W - 1),
          std::clamp(static_cast<int>(std::llround(a.y / fy)), 0, H - 1)};
      cands.push_back(make_candidate(std::move(mask), std::move(depth), anchor_native));
    }
  }
  return cands;
}

struct StepConfig {
  double student_scale = 1.0; // this step's rescale factor; 1.0 in base phase
  double gamma = 4.0;         // dice weight; 0 turns distillation off
  double tau_c = 0.3;         // color-pairwise similarity threshold
  double tau_d = 0.5;         // depth-pairwise similarity threshold
  double color_theta = 2.0;
  double depth_sim_k = 8.0;
  int pair_dilation = 2;
  int region_dilate_px = 4; // pairwise region: annotated boxes dilated by this
  int anchor_stride = 8;
  MatchWeights match;
  bool use_depth_consistency = true; // ablation: depth-pairwise term
  bool use_instance_depth = true;    // ablation: instance depth MSE
};

struct StepResult {
  LossTerms terms; // summed over instances
  double total = 0.0;
  std::vector<HeadParams> grads;
  int distilled_instances = 0;
};

/// Per-scene scratch that persists across steps: the native edge graph and
/// the native pseudo-depth pixel similarity (both pure functions of the
/// scene), plus graphs for student scales as they appear.
struct SceneCache {
  std::map<std::pair<int, int>, EdgeGraph> graphs;
  std::vector<double> native_pixel_sim;
  bool has_native_sim = false;

  const EdgeGraph& graph(int h, int w, int dilation) {
    auto it = graphs.find({h, w});
    if (it == graphs.end())
      it = graphs.emplace(std::make_pair(h, w), neighbor_edges(h, w, dilation)).first;
    return it->second;
  }
};

/// One optimization step for one scene: evaluates every instance head on
/// the (possibly rescaled) scene, accumulates the loss stack, and returns
/// per-instance parameter gradients. With a teacher and gamma != 0 it also
/// runs the matching pipeline and adds the dice term on assigned pseudo
/// masks. Does not update parameters; the trainer owns SGD and EMA.
inline StepResult train_step(const TrainScene& scene,
                             const std::vector<HeadParams>& student,
                             const TeacherState* teacher, const StepConfig& cfg,
                             SceneCache& cache) {
  if (student.size() != scene.boxes.size())
    throw ValidationError("train_step: head count != box count");
  if (!(cfg.student_scale > 0.0 && cfg.student_scale <= 1.0))
    throw ValidationError("train_step: student_scale must lie in (0,1]");

  const int H = scene.image.height, W = scene.image.width;
  const int sh = std::max(8, static_cast<int>(std::llround(H * cfg.student_scale)));
  const int sw = std::max(8, static_cast<int>(std::llround(W * cfg.student_scale)));
  const bool native = (sh == H && sw == W);
  const double fx = static_cast<double>(sw) / W;
  const double fy = static_cast<double>(sh) / H;

  const Raster* image = &scene.image;
  const Raster* depth = &scene.pseudo_depth;
  Raster image_s, depth_s;
  if (!native) {
    image_s = resize_bilinear(scene.image, sh, sw);
    depth_s = resize_bilinear(scene.pseudo_depth, sh, sw);
    image = &image_s;
    depth = &depth_s;
  }

  std::vector<Box> boxes(scene.boxes.size());
  for (std::size_t k = 0; k < boxes.size(); ++k)
    boxes[k] = Box{scene.boxes[k].x0 * fx, scene.boxes[k].y0 * fy,
                   scene.boxes[k].x1 * fx, scene.boxes[k].y1 * fy};

  const EdgeGraph& graph = cache.graph(sh, sw, cfg.pair_dilation);
  const FieldSimilarity depth_sim = depth_similarity(*depth, graph, cfg.depth_sim_k);
  const std::vector<double> color_sim = color_similarity(*image, graph, cfg.color_theta);

  // Pairwise region: union of annotated boxes dilated a few pixels, so the
  // affinity losses see the object boundary but not the far background.
  Raster region(sh, sw, 1);
  for (const Box& b : boxes) {
    const PixelRect r = pixel_rect(
        Box{b.x0 - cfg.region_dilate_px, b.y0 - cfg.region_dilate_px,
            b.x1 + cfg.region_dilate_px, b.y1 + cfg.region_dilate_px},
        sh, sw);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) region.at(y, x) = 1.0;
  }

  // Pseudo-mask targets from the teacher (distillation phase only).
  std::vector<std::optional<PseudoMask>> assigned(scene.boxes.size());
  StepResult res;
  if (teacher != nullptr && cfg.gamma != 0.0) {
    if (!cache.has_native_sim) {
      const EdgeGraph& ng = cache.graph(H, W, cfg.pair_dilation);
      cache.native_pixel_sim =
          depth_similarity(scene.pseudo_depth, ng, cfg.depth_sim_k).pixel;
      cache.has_native_sim = true;
    }
    const std::vector<Candidate> cands =
        teacher_candidates(scene, *teacher, cfg.anchor_stride);
    assigned = assign_pseudo_masks(scene.boxes, cands, cache.native_pixel_sim,
                                   cfg.match);
  }

  const Raster base = base_features(*image);
  res.grads.resize(student.size());
  for (std::size_t k = 0; k < student.size(); ++k) {
    const PixelRect br = pixel_rect(boxes[k], sh, sw);
    if (br.empty())
      throw ValidationError("train_step: box " + std::to_string(k) +
                            " covers no pixels at this scale");
    const PixelLoc anchor{(br.x0 + br.x1) / 2, (br.y0 + br.y1) / 2};
    const Raster input = head_input(base, anchor);
    const HeadResult out = head_forward(input, student[k], /*keep_cache=*/true);

    Raster d_mask(sh, sw, 1), d_depth(sh, sw, 1);
    const MaskLoss proj = loss_projection(out.mask_prob, boxes[k]);
    res.terms.projection += proj.value;
    for (std::size_t p = 0; p < d_mask.data.size(); ++p)
      d_mask.data[p] += proj.d_mask.data[p];

    const MaskLoss colr = loss_pairwise(out.mask_prob, color_sim, graph, cfg.tau_c, region);
    res.terms.pairwise_color += colr.value;
    for (std::size_t p = 0; p < d_mask.data.size(); ++p)
      d_mask.data[p] += colr.d_mask.data[p];

    if (cfg.use_depth_consistency) {
      const MaskLoss dpw = loss_pairwise(out.mask_prob, depth_sim.edge, graph,
                                         cfg.tau_d, region);
      res.terms.pairwise_depth += dpw.value;
      for (std::size_t p = 0; p < d_mask.data.size(); ++p)
        d_mask.data[p] += dpw.d_mask.data[p];
    }

    if (cfg.use_instance_depth) {
      const DepthLoss dep = loss_instance_depth(out.depth_pred, *depth, boxes[k]);
      res.terms.instance_depth += dep.value;
      d_depth = dep.d_depth;
    }

    if (assigned[k].has_value()) {
      Raster target = native ? assigned[k]->mask
                             : binarize(resize_bilinear(assigned[k]->mask, sh, sw), 0.5);
      const MaskLoss dice = loss_dice(out.mask_prob, target);
      res.terms.distill_dice += dice.value;
      for (std::size_t p = 0; p < d_mask.data.size(); ++p)
        d_mask.data[p] += cfg.gamma * dice.d_mask.data[p];
      ++res.distilled_instances;
    }

    res.grads[k] = head_backward(out, student[k], d_mask, d_depth);
  }

  res.total = total_loss(res.terms, teacher != nullptr && cfg.gamma != 0.0, cfg.gamma);
  return res;
}

} // namespace dgseg
