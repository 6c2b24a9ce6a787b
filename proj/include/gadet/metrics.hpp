#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "gadet/error.hpp"

namespace gadet {

// Linear interpolation between order statistics (Hyndman-Fan type 7).
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ContractError("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw ContractError("quantile level must lie in [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double h = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

struct IqrFence {
  double q1 = 0.0;
  double q3 = 0.0;
  double threshold = 0.0;  // q3 + 1.5 (q3 - q1)
};

inline IqrFence iqr_threshold(std::span<const double> scores) {
  std::vector<double> v(scores.begin(), scores.end());
  IqrFence f;
  f.q1 = quantile(v, 0.25);
  f.q3 = quantile(v, 0.75);
  f.threshold = f.q3 + 1.5 * (f.q3 - f.q1);
  return f;
}

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), via average ranks.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("AUC-ROC needs both classes among the labels");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e < n && scores[order[e]] == scores[order[k]]) ++e;
    const double avg_rank = 0.5 * static_cast<double>(k + 1 + e);  // ranks k+1..e
    for (std::size_t q = k; q < e; ++q)
      if (labels[order[q]]) rank_sum += avg_rank;
    k = e;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

}  // namespace gadet
