#pragma once

// Central finite-difference verification of analytic gradients.
//
// Every analytic gradient in the engine is checked against
//
//   f'(x) ~= (f(x+h) - f(x-h)) / 2h,   h = 1e-5 (64-bit throughout)
//
// with the mixed tolerance |a - fd| <= atol + rtol * max(|a|,|fd|),
// atol = 1e-8, rtol = 1e-4. The reported relative error for a gradient
// vector is max_i |a_i - fd_i| / max(||a||_inf, ||fd||_inf, atol).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace dgseg {

struct GradCheckSettings {
  double step = 1e-5;
  double atol = 1e-8;
  double rtol = 1e-4;
};

struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0; // scaled by the gradient's infinity norm
  double max_abs_err = 0.0;
  int worst_index = -1;
  int count = 0;
};

/// Verifies d/dx_i f(x) at the given coordinate indices. `f` must be a pure
/// function of the vector; `analytic` holds the full gradient at x.
inline GradCheckResult check_gradient(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x,
                                      const std::vector<double>& analytic,
                                      const std::vector<int>& indices,
                                      const GradCheckSettings& s = {}) {
  GradCheckResult r;
  double norm = s.atol;
  for (int i : indices) norm = std::max(norm, std::abs(analytic[i]));

  std::vector<double> fd(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    const double x0 = x[i];
    x[i] = x0 + s.step;
    const double fp = f(x);
    x[i] = x0 - s.step;
    const double fm = f(x);
    x[i] = x0;
    fd[k] = (fp - fm) / (2.0 * s.step);
    norm = std::max(norm, std::abs(fd[k]));
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    const double a = analytic[i];
    const double err = std::abs(a - fd[k]);
    const double tol = s.atol + s.rtol * std::max(std::abs(a), std::abs(fd[k]));
    if (err > tol) r.pass = false;
    if (err > r.max_abs_err) {
      r.max_abs_err = err;
      r.worst_index = i;
    }
    r.max_rel_err = std::max(r.max_rel_err, err / norm);
    ++r.count;
  }
  return r;
}

/// One verified gradient family in a verification report.
struct GradCheckEntry {
  std::string term;
  int cases = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
};

} // namespace dgseg
