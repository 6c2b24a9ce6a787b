#pragma once

#include <cmath>
#include <vector>

#include "gadet/tensor.hpp"

namespace gadet {

struct AdamOptions {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Global gradient norm before clipping.
  double step() {
    ++t_;
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double factor = opts_.clip_norm > 0.0 && norm > opts_.clip_norm ? opts_.clip_norm / norm : 1.0;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * factor;
        m_[k][i] = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * gi;
        v_[k][i] = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * gi * gi;
        w[i] -= opts_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + opts_.eps);
      }
    }
    return norm;
  }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace gadet
