#pragma once

// Central finite-difference gradient checking. The check only ever calls the
// forward function, so it stays independent of every backward rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gadet/tensor.hpp"

namespace gadet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  bool passed(double tol) const { return max_rel_error <= tol; }
};

// Relative error with a floor on the denominator so that gradients that are
// zero on both routes do not divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `f` rebuilds the scalar from the current leaf values each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps = 1e-5,
                                  double floor = 1e-2) {
  for (auto& l : leaves) l.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());

  GradCheckResult r;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto w = leaves[k].mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + eps;
      const double up = f().item();
      w[i] = orig - eps;
      const double down = f().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][i], numeric, floor));
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[k][i] - numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gadet
