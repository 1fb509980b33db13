#pragma once

// Depth-aware assignment of teacher mask candidates to annotated boxes.
//
// Each (box, candidate) pair gets the score
//
//   S = alpha * IoU(box, candidate box)
//     + beta  * S_dcons(candidate)
//     + (1 - (alpha + beta)) * S_pred(candidate)
//
// and a Hungarian solver picks the assignment maximizing the total. S_dcons
// measures how well the candidate's mask agrees with pseudo-depth planarity:
// among mask pixels, the similarity-weighted fraction whose local depth
// similarity exceeds tau_d. Matches scoring below tau_m are discarded.
//
// The coefficient on S_pred is computed as 1 - (alpha + beta), not
// 1 - alpha - beta: for the default alpha=0.8, beta=0.2 the former is an
// exact IEEE zero while the latter is -5.5e-17, enough to leak a tiny
// negative weight onto S_pred. Keep the parenthesization.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dgseg/errors.hpp"
#include "dgseg/raster.hpp"

namespace dgseg {

/// One teacher proposal: a mask/depth prediction evaluated from some anchor.
struct Candidate {
  Raster mask_prob;  // full-resolution probability mask
  Raster depth_pred; // matching depth prediction
  Box box;           // tight box of the binarized mask (empty sentinel if none)
  double pred_score = 0.0; // mean mask probability over the binarized support
  PixelLoc anchor;
};

inline double box_iou(const Box& a, const Box& b) {
  if (a.empty() || b.empty()) return 0.0;
  const double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const double iw = ix1 - ix0, ih = iy1 - iy0;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Builds a candidate from a raw mask/depth prediction: binarize at 0.5,
/// take the tight box of the support, and use the mean probability over the
/// support as the prediction confidence (0 if the support is empty).
inline Candidate make_candidate(Raster mask_prob, Raster depth_pred, PixelLoc anchor) {
  Candidate c;
  c.box = mask_bbox(mask_prob); // {v > 0.5} support
  double sum = 0.0;
  long n = 0;
  for (double v : mask_prob.data)
    if (v > 0.5) {
      sum += v;
      ++n;
    }
  c.pred_score = n > 0 ? sum / n : 0.0;
  c.mask_prob = std::move(mask_prob);
  c.depth_pred = std::move(depth_pred);
  c.anchor = anchor;
  return c;
}

/// Depth-consistency score of a soft mask m against per-pixel depth
/// similarity s (from FieldSimilarity::pixel):
///
///   sum_p 1{s_p > tau_d} m_p s_p  /  sum_p m_p s_p
///
/// i.e. the share of the mask's similarity-weighted mass sitting on
/// depth-coherent pixels. Returns 0 when the denominator vanishes (an
/// empty or all-incoherent mask has no evidence to offer).
inline double depth_consistency_score(const Raster& mask,
                                      const std::vector<double>& pixel_sim,
                                      double tau_d) {
  if (pixel_sim.size() != mask.data.size() || mask.channels != 1)
    throw ValidationError("depth_consistency_score: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < pixel_sim.size(); ++p) {
    const double w = mask.data[p] * pixel_sim[p];
    den += w;
    if (pixel_sim[p] > tau_d) num += w;
  }
  if (den < 1e-12) return 0.0;
  return num / den;
}

struct MatchWeights {
  double alpha = 0.8; // box IoU
  double beta = 0.2;  // depth consistency
  double tau_d = 0.5; // per-pixel similarity threshold inside S_dcons
  double tau_m = 0.8; // minimum combined score to accept a match

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta <= 1.0))
      throw ValidationError("match weights: need alpha,beta >= 0 and alpha+beta <= 1");
    if (!(tau_m >= 0.0 && tau_m <= 1.0))
      throw ValidationError("match weights: tau_m must lie in [0,1]");
  }
};

inline double matching_score(double iou, double depth_cons, double pred_score,
                             const MatchWeights& w) {
  return w.alpha * iou + w.beta * depth_cons +
         (1.0 - (w.alpha + w.beta)) * pred_score;
}

/// Maximum-total-score assignment on a rectangular score matrix
/// (rows x cols, row-major). Returns col index per row, -1 for unassigned
/// rows (only when rows > cols). Shortest-augmenting-path Hungarian on the
/// negated scores, O(n^2 m); deterministic, and ties resolve toward lower
/// indices because scanning is always in ascending order.
inline std::vector<int> hungarian_max(const std::vector<double>& score,
                                      int rows, int cols) {
  if (rows <= 0 || cols <= 0) return std::vector<int>(std::max(rows, 0), -1);
  if (static_cast<std::size_t>(rows) * cols != score.size())
    throw ValidationError("hungarian_max: matrix size mismatch");

  const bool flip = rows > cols; // solver wants rows <= cols
  const int n = flip ? cols : rows;
  const int m = flip ? rows : cols;
  auto cost = [&](int i, int j) {
    return flip ? -score[static_cast<std::size_t>(j) * cols + i]
                : -score[static_cast<std::size_t>(i) * cols + j];
  };

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(rows, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int small = p[j] - 1, large = j - 1;
    if (flip)
      row_to_col[large] = small;
    else
      row_to_col[small] = large;
  }
  return row_to_col;
}

/// A pseudo-label produced by matching: the binarized candidate mask plus
/// the bookkeeping the trainer reports.
struct PseudoMask {
  Raster mask; // binary {0,1}
  double score = 0.0;
  int candidate = -1;
};

/// Matches candidates to ground-truth boxes and returns one optional pseudo
/// mask per box (nullopt: no candidate assigned, or assigned below tau_m).
/// `pixel_sim` is the per-pixel pseudo-depth similarity at the candidates'
/// resolution.
inline std::vector<std::optional<PseudoMask>> assign_pseudo_masks(
    const std::vector<Box>& boxes, const std::vector<Candidate>& cands,
    const std::vector<double>& pixel_sim, const MatchWeights& w) {
  w.validate();
  std::vector<std::optional<PseudoMask>> out(boxes.size());
  if (boxes.empty() || cands.empty()) return out;

  const int R = static_cast<int>(boxes.size());
  const int C = static_cast<int>(cands.size());
  std::vector<double> dcons(C), score(static_cast<std::size_t>(R) * C);
  for (int j = 0; j < C; ++j)
    dcons[j] = depth_consistency_score(cands[j].mask_prob, pixel_sim, w.tau_d);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j)
      score[static_cast<std::size_t>(i) * C + j] =
          matching_score(box_iou(boxes[i], cands[j].box), dcons[j],
                         cands[j].pred_score, w);

  const std::vector<int> match = hungarian_max(score, R, C);
  for (int i = 0; i < R; ++i) {
    const int j = match[i];
    if (j < 0) continue;
    const double s = score[static_cast<std::size_t>(i) * C + j];
    if (!(s > w.tau_m)) continue; // unreliable: train this box without distill
    PseudoMask pm;
    pm.mask = binarize(cands[j].mask_prob, 0.5);
    pm.score = s;
    pm.candidate = j;
    out[i] = std::move(pm);
  }
  return out;
}

} // namespace dgseg
