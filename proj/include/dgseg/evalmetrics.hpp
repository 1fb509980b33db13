#pragma once

// Evaluation: per-instance mask IoU against ground truth, plus COCO-style
// mask average precision (IoU thresholds 0.50:0.05:0.95, 101-point
// interpolated precision, mean over categories that have ground truth).
//
// Thresholds are generated as (50 + 5i)/100 so that e.g. an IoU of exactly
// 3/5 compares equal to the 0.60 threshold instead of falling a few ulps
// short of an accumulated 0.50 + 2*0.05.
//
// Reports are pure functions of (dataset, checkpoint): no timestamps or
// timing in here -- wall-clock bookkeeping belongs to the run manifest, so
// report files can be compared byte for byte across runs and thread counts.

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgseg/annotations.hpp"
#include "dgseg/errors.hpp"
#include "dgseg/features.hpp"
#include "dgseg/maskhead.hpp"
#include "dgseg/matching.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

/// IoU of two binary masks. Two empty masks are identical, hence 1.
inline double mask_iou(const Raster& a, const Raster& b) {
  if (!a.same_shape(b) || a.channels != 1)
    throw ValidationError("mask_iou: shape mismatch");
  long inter = 0, uni = 0;
  for (std::size_t p = 0; p < a.data.size(); ++p) {
    const bool pa = a.data[p] > 0.5, pb = b.data[p] > 0.5;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// One predicted instance, paired with the annotation its head was
/// trained for (heads are per-annotation, so the pairing is positional,
/// not matched).
struct PredictedInstance {
  int annotation_id = 0;
  int category = 0;
  double score = 0.0;
  Raster mask; // binary
  Box box;
};

struct ScenePrediction {
  int scene_id = 0;
  std::vector<PredictedInstance> instances;
};

/// Runs every instance head over its scene at native resolution and
/// binarizes at 0.5. Score is the mean mask probability over the support.
inline ScenePrediction predict_scene(const TrainScene& scene,
                                     const std::vector<HeadParams>& params) {
  if (params.size() != scene.boxes.size())
    throw ValidationError("predict_scene: head count != annotation count");
  ScenePrediction out;
  out.scene_id = scene.id;
  const Raster base = base_features(scene.image);
  const int H = scene.image.height, W = scene.image.width;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const PixelRect br = pixel_rect(scene.boxes[k], H, W);
    if (br.empty())
      throw ValidationError("predict_scene: annotation box covers no pixels");
    const PixelLoc anchor{(br.x0 + br.x1) / 2, (br.y0 + br.y1) / 2};
    HeadResult fwd = head_forward(head_input(base, anchor), params[k], false);
    const Candidate c = make_candidate(std::move(fwd.mask_prob),
                                       std::move(fwd.depth_pred), anchor);
    PredictedInstance pi;
    pi.annotation_id = scene.annotation_ids[k];
    pi.category = scene.categories[k];
    pi.score = c.pred_score;
    pi.mask = binarize(c.mask_prob, 0.5);
    pi.box = c.box;
    out.instances.push_back(std::move(pi));
  }
  return out;
}

struct ApSummary {
  double ap = 0.0;   // mean over thresholds and categories
  double ap50 = 0.0; // threshold 0.50 only
  double ap75 = 0.0;
  std::map<int, double> per_category; // at the full threshold sweep
};

namespace detail {

struct ApPred {
  double score = 0.0;
  int order = 0; // insertion index; stable tiebreak for equal scores
  std::vector<double> iou; // vs each gt of the same scene+category
  std::vector<int> gt;     // global gt indices parallel to iou
};

/// 101-point interpolated AP from (score-sorted) TP flags.
inline double ap_from_matches(const std::vector<char>& tp, int n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  int tp_count = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    tp_count += tp[i];
    precision.push_back(static_cast<double>(tp_count) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp_count) / n_gt);
  }
  // Interpolated precision at recall r: max precision over all operating
  // points whose recall is >= r (recall is nondecreasing down the list).
  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double want = r / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= want) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / 101.0;
}

} // namespace detail

/// COCO-style mask AP over all scenes. Predictions are matched greedily in
/// descending score order (ties broken by insertion order) to the
/// highest-IoU unmatched ground truth of the same scene and category.
inline ApSummary average_precision(const std::vector<ScenePrediction>& preds,
                                   const std::vector<EvalScene>& gts) {
  // Flatten ground truth with global indices, grouped by category.
  struct GtRef {
    int scene_id;
    int category;
    const Raster* mask;
  };
  std::vector<GtRef> all_gt;
  std::map<int, int> gt_per_category;
  for (const auto& es : gts) {
    for (const auto& gi : es.instances) {
      all_gt.push_back({es.id, gi.category, &gi.mask});
      gt_per_category[gi.category] += 1;
    }
  }

  std::map<int, std::vector<detail::ApPred>> preds_by_category;
  int order = 0;
  for (const auto& sp : preds) {
    for (const auto& pi : sp.instances) {
      detail::ApPred ap;
      ap.score = pi.score;
      ap.order = order++;
      for (std::size_t g = 0; g < all_gt.size(); ++g) {
        if (all_gt[g].scene_id != sp.scene_id || all_gt[g].category != pi.category)
          continue;
        ap.gt.push_back(static_cast<int>(g));
        ap.iou.push_back(mask_iou(pi.mask, *all_gt[g].mask));
      }
      preds_by_category[pi.category].push_back(std::move(ap));
    }
  }

  std::vector<double> thresholds;
  for (int i = 0; i <= 9; ++i) thresholds.push_back((50 + 5 * i) / 100.0);

  ApSummary out;
  std::map<int, std::vector<double>> ap_per_cat_thr;
  for (const auto& [cat, n_gt] : gt_per_category) {
    auto preds_cat = preds_by_category[cat]; // copy; sorted below
    std::sort(preds_cat.begin(), preds_cat.end(),
              [](const detail::ApPred& a, const detail::ApPred& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.order < b.order;
              });
    for (const double thr : thresholds) {
      std::vector<char> gt_used(all_gt.size(), 0);
      std::vector<char> tp;
      tp.reserve(preds_cat.size());
      for (const auto& p : preds_cat) {
        int best_g = -1;
        double best_iou = 0.0;
        for (std::size_t j = 0; j < p.gt.size(); ++j) {
          if (gt_used[p.gt[j]]) continue;
          if (p.iou[j] >= thr && p.iou[j] > best_iou) {
            best_iou = p.iou[j];
            best_g = p.gt[j];
          }
        }
        if (best_g >= 0) {
          gt_used[best_g] = 1;
          tp.push_back(1);
        } else {
          tp.push_back(0);
        }
      }
      ap_per_cat_thr[cat].push_back(detail::ap_from_matches(tp, n_gt));
    }
  }

  if (ap_per_cat_thr.empty()) return out;
  double sum_all = 0.0, sum50 = 0.0, sum75 = 0.0;
  for (const auto& [cat, aps] : ap_per_cat_thr) {
    double s = 0.0;
    for (double a : aps) s += a;
    out.per_category[cat] = s / aps.size();
    sum_all += s / aps.size();
    sum50 += aps[0]; // threshold 0.50
    sum75 += aps[5]; // threshold 0.75
  }
  const double n = static_cast<double>(ap_per_cat_thr.size());
  out.ap = sum_all / n;
  out.ap50 = sum50 / n;
  out.ap75 = sum75 / n;
  return out;
}

struct MetricsReport {
  nlohmann::ordered_json json;
  double mean_iou = 0.0;
  ApSummary ap;
};

/// Builds the full evaluation report: per-instance IoU (heads paired with
/// their own annotations), per-scene means, dataset mean, and mask AP.
inline MetricsReport build_metrics_report(const std::vector<ScenePrediction>& preds,
                                          const std::vector<EvalScene>& gts) {
  std::map<int, const EvalScene*> eval_by_id;
  for (const auto& es : gts) eval_by_id[es.id] = &es;

  MetricsReport rep;
  auto& scenes_json = rep.json["scenes"] = nlohmann::ordered_json::array();
  double iou_sum = 0.0;
  long iou_count = 0;
  for (const auto& sp : preds) {
    const auto it = eval_by_id.find(sp.scene_id);
    if (it == eval_by_id.end())
      throw ValidationError("evaluation: no ground truth for scene " +
                            std::to_string(sp.scene_id));
    std::map<int, const EvalInstance*> gt_by_ann;
    for (const auto& gi : it->second->instances) gt_by_ann[gi.annotation_id] = &gi;

    nlohmann::ordered_json sj;
    sj["scene_id"] = sp.scene_id;
    auto& inst_json = sj["instances"] = nlohmann::ordered_json::array();
    double scene_sum = 0.0;
    for (const auto& pi : sp.instances) {
      const auto git = gt_by_ann.find(pi.annotation_id);
      if (git == gt_by_ann.end())
        throw ValidationError("evaluation: no ground-truth mask for annotation " +
                              std::to_string(pi.annotation_id));
      const double iou = mask_iou(pi.mask, git->second->mask);
      scene_sum += iou;
      iou_sum += iou;
      ++iou_count;
      inst_json.push_back({{"annotation_id", pi.annotation_id},
                           {"category_id", pi.category},
                           {"score", pi.score},
                           {"iou", iou}});
    }
    sj["mean_iou"] = sp.instances.empty() ? 0.0 : scene_sum / sp.instances.size();
    scenes_json.push_back(std::move(sj));
  }
  rep.mean_iou = iou_count > 0 ? iou_sum / iou_count : 0.0;
  rep.ap = average_precision(preds, gts);

  rep.json["mean_iou"] = rep.mean_iou;
  rep.json["ap"] = rep.ap.ap;
  rep.json["ap50"] = rep.ap.ap50;
  rep.json["ap75"] = rep.ap.ap75;
  auto& cat_json = rep.json["per_category_ap"] = nlohmann::ordered_json::object();
  for (const auto& [cat, ap] : rep.ap.per_category)
    cat_json[std::to_string(cat)] = ap;
  return rep;
}

/// CSV companion: one row per instance, stable order.
inline std::string metrics_csv(const MetricsReport& rep) {
  std::string csv = "scene_id,annotation_id,category_id,score,iou\n";
  for (const auto& sj : rep.json["scenes"]) {
    for (const auto& ij : sj["instances"]) {
      char line[160];
      std::snprintf(line, sizeof line, "%d,%d,%d,%.17g,%.17g\n",
                    sj["scene_id"].get<int>(), ij["annotation_id"].get<int>(),
                    ij["category_id"].get<int>(), ij["score"].get<double>(),
                    ij["iou"].get<double>());
      csv += line;
    }
  }
  return csv;
}

} // namespace dgseg
