#pragma once

// Independent reference implementations used only by the tests. These are
// deliberately written in a different style from the library (std::vector
// math, permutation enumeration) so a shared bug is unlikely.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "dgseg/maskhead.hpp"
#include "dgseg/raster.hpp"

namespace oracle {

/// Single-pixel head evaluation, straight-line math on std::vectors.
struct HeadOutputs {
  double mask = 0.0;
  double depth = 0.0;
  double mask_logit = 0.0;
  double depth_logit = 0.0;
};

inline HeadOutputs head_at_pixel(const std::vector<double>& x,
                                 const dgseg::HeadParams& p) {
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const auto relu = [](std::vector<double> v) {
    for (double& e : v) e = std::max(0.0, e);
    return v;
  };
  const auto affine = [](const double* W, const double* b, int out_n,
                         const std::vector<double>& in) {
    std::vector<double> out(out_n);
    for (int o = 0; o < out_n; ++o)
      out[o] = b[o] + std::inner_product(in.begin(), in.end(),
                                         W + o * static_cast<int>(in.size()), 0.0);
    return out;
  };

  const std::vector<double> h1 = relu(affine(p.w1(), p.b1(), 8, x));
  const std::vector<double> h2 = relu(affine(p.w2(), p.b2(), 8, h1));

  HeadOutputs o;
  o.depth_logit = p.bd() + std::inner_product(h2.begin(), h2.end(), p.wd(), 0.0);
  o.mask_logit = p.bm() + std::inner_product(h2.begin(), h2.end(), p.wm(), 0.0);
  o.depth = sig(o.depth_logit);
  o.mask = sig(o.mask_logit * o.depth);
  return o;
}

/// Exhaustive maximum-score assignment: tries every injective mapping of the
/// smaller side into the larger. Feasible up to ~7x7. Returns the best total
/// score; if `best_rows` is given, also the argmax row->col mapping.
inline double brute_force_assignment(const std::vector<double>& score, int rows,
                                     int cols, std::vector<int>* best_rows = nullptr) {
  const bool flip = rows > cols;
  const int n = flip ? cols : rows; // n <= m
  const int m = flip ? rows : cols;
  std::vector<int> pick(m);
  std::iota(pick.begin(), pick.end(), 0);

  const auto at = [&](int i, int j) { // i indexes the small side
    return flip ? score[static_cast<std::size_t>(j) * cols + i]
                : score[static_cast<std::size_t>(i) * cols + j];
  };

  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> best_pick;
  // Enumerate ordered selections of n items out of m via permutations of the
  // full index set, keyed on the first n entries.
  std::vector<int> sel(n);
  const std::uint64_t total = [&] {
    std::uint64_t t = 1;
    for (int i = 0; i < n; ++i) t *= static_cast<std::uint64_t>(m - i);
    return t;
  }();
  std::vector<int> avail;
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t c = code;
    avail.assign(pick.begin(), pick.end());
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const int idx = static_cast<int>(c % avail.size());
      c /= avail.size();
      sel[i] = avail[idx];
      avail.erase(avail.begin() + idx);
      s += at(i, sel[i]);
    }
    if (s > best) {
      best = s;
      best_pick = sel;
    }
  }
  if (best_rows) {
    best_rows->assign(rows, -1);
    for (int i = 0; i < n; ++i) {
      if (flip)
        (*best_rows)[best_pick[i]] = i;
      else
        (*best_rows)[i] = best_pick[i];
    }
  }
  return best;
}

/// Total score actually achieved by a row->col assignment.
inline double assignment_score(const std::vector<double>& score, int cols,
                               const std::vector<int>& row_to_col) {
  double s = 0.0;
  for (std::size_t i = 0; i < row_to_col.size(); ++i)
    if (row_to_col[i] >= 0) s += score[i * cols + row_to_col[i]];
  return s;
}

/// Mask IoU the slow way, for cross-checking the library's version.
inline double mask_iou_slow(const dgseg::Raster& a, const dgseg::Raster& b) {
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] > 0.5, pb = b.data[i] > 0.5;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

} // namespace oracle
