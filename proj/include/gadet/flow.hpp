#pragma once

// Conditional masked autoregressive flow over per-channel window vectors.
//
// Each layer maps y -> exp(s) * y + m, where s_k and m_k depend on y_{<k}
// (through strictly triangular masked weights) and on the condition C
// (through dense weights). Scales are bounded with 5*tanh(raw/5). Coordinate
// order is reversed between layers. The base density is N(0, I).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gadet/error.hpp"
#include "gadet/random.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

inline constexpr double kScaleBound = 5.0;

struct FlowLayer {
  Tensor scale_w;  // [T, T], masked
  Tensor scale_c;  // [d, T]
  Tensor scale_b;  // [T]
  Tensor shift_w;
  Tensor shift_c;
  Tensor shift_b;

  std::vector<Tensor> tensors() const { return {scale_w, scale_c, scale_b, shift_w, shift_c, shift_b}; }
};

class FlowModel {
 public:
  FlowModel() = default;

  // All scale/shift outputs zero: the flow is the identity map.
  static FlowModel identity(std::size_t dim, std::size_t cond_dim, std::size_t depth) {
    FlowModel f(dim, cond_dim);
    for (std::size_t l = 0; l < depth; ++l)
      f.layers_.push_back({Tensor::zeros({dim, dim}, true), Tensor::zeros({cond_dim, dim}, true),
                           Tensor::zeros({dim}, true), Tensor::zeros({dim, dim}, true),
                           Tensor::zeros({cond_dim, dim}, true), Tensor::zeros({dim}, true)});
    return f;
  }

  static FlowModel random(std::size_t dim, std::size_t cond_dim, std::size_t depth, double sd, Rng& rng) {
    FlowModel f(dim, cond_dim);
    for (std::size_t l = 0; l < depth; ++l)
      f.layers_.push_back({normal_tensor({dim, dim}, sd, rng, true), normal_tensor({cond_dim, dim}, sd, rng, true),
                           normal_tensor({dim}, sd, rng, true), normal_tensor({dim, dim}, sd, rng, true),
                           normal_tensor({cond_dim, dim}, sd, rng, true), normal_tensor({dim}, sd, rng, true)});
    return f;
  }

  std::size_t dim() const { return dim_; }
  std::size_t cond_dim() const { return cond_dim_; }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<FlowLayer>& layers() const { return layers_; }
  std::vector<FlowLayer>& layers() { return layers_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_)
      for (auto& t : l.tensors()) out.push_back(t);
    return out;
  }

  // mask[k', k] = 1 iff input coordinate k' may feed output coordinate k.
  const Tensor& mask() const { return mask_; }

  // x: [R, T], cond: [R, d] -> (z [R, T], log|det J| [R]).
  std::pair<Tensor, Tensor> forward(const Tensor& x, const Tensor& cond) const {
    check(x, cond);
    Tensor y = x;
    Tensor log_det;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      Tensor raw_s = matmul(y, L.scale_w * mask_) + matmul(cond, L.scale_c) + L.scale_b;
      Tensor s = scale(tanh(scale(raw_s, 1.0 / kScaleBound)), kScaleBound);
      Tensor m = matmul(y, L.shift_w * mask_) + matmul(cond, L.shift_c) + L.shift_b;
      y = exp(s) * y + m;
      log_det = l == 0 ? sum_last(s) : log_det + sum_last(s);
      if (l + 1 < layers_.size()) y = reverse_last(y);
    }
    if (!log_det.defined()) log_det = Tensor::zeros({x.dim(0)});
    return {y, log_det};
  }

  // Per-row log density, shape [R].
  Tensor log_prob(const Tensor& x, const Tensor& cond) const {
    auto [z, log_det] = forward(x, cond);
    const double c = -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
    return add_scalar(scale(sum_last(square(z)), -0.5), c) + log_det;
  }

  double log_prob(std::span<const double> x, std::span<const double> cond) const {
    return log_prob(Tensor::from({1, x.size()}, {x.begin(), x.end()}),
                    Tensor::from({1, cond.size()}, {cond.begin(), cond.end()}))
        .item();
  }

  // Inverts the flow for one row by sequential coordinate recovery.
  std::vector<double> inverse(std::span<const double> z, std::span<const double> cond) const {
    if (z.size() != dim_ || cond.size() != cond_dim_) throw ContractError("inverse: dimension mismatch");
    std::vector<double> y(z.begin(), z.end());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) std::reverse(y.begin(), y.end());
      const auto& L = layers_[l];
      auto sw = L.scale_w.values(), sc = L.scale_c.values(), sb = L.scale_b.values();
      auto mw = L.shift_w.values(), mc = L.shift_c.values(), mb = L.shift_b.values();
      std::vector<double> x(dim_, 0.0);
      for (std::size_t k = 0; k < dim_; ++k) {
        double rs = sb[k], rm = mb[k];
        for (std::size_t q = 0; q < k; ++q) {
          rs += x[q] * sw[q * dim_ + k];
          rm += x[q] * mw[q * dim_ + k];
        }
        for (std::size_t q = 0; q < cond_dim_; ++q) {
          rs += cond[q] * sc[q * dim_ + k];
          rm += cond[q] * mc[q * dim_ + k];
        }
        const double s = kScaleBound * std::tanh(rs / kScaleBound);
        x[k] = (y[k] - rm) * std::exp(-s);
      }
      y = std::move(x);
    }
    return y;
  }

 private:
  FlowModel(std::size_t dim, std::size_t cond_dim) : dim_(dim), cond_dim_(cond_dim) {
    std::vector<double> m(dim * dim, 0.0);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = a + 1; b < dim; ++b) m[a * dim + b] = 1.0;
    mask_ = Tensor::from({dim, dim}, std::move(m));
  }

  void check(const Tensor& x, const Tensor& cond) const {
    if (x.rank() != 2 || x.dim(1) != dim_ || cond.rank() != 2 || cond.dim(1) != cond_dim_ || cond.dim(0) != x.dim(0))
      throw ContractError("flow input " + shape_str(x.shape()) + " / condition " + shape_str(cond.shape()) +
                          " do not match flow dims " + std::to_string(dim_) + "/" + std::to_string(cond_dim_));
  }

  std::size_t dim_ = 0;
  std::size_t cond_dim_ = 0;
  std::vector<FlowLayer> layers_;
  Tensor mask_;
};

// Mean per-channel log-likelihood of a batch: features [B,N,T] conditioned
// on embeddings [B,N,d]. Scalar tensor.
inline Tensor batch_log_likelihood(const Tensor& features, const Tensor& embeddings, const FlowModel& flow) {
  const std::size_t rows = features.dim(0) * features.dim(1);
  if (embeddings.dim(0) != features.dim(0) || embeddings.dim(1) != features.dim(1))
    throw ContractError("one condition per (window, channel) required");
  Tensor lp = flow.log_prob(reshape(features, {rows, features.dim(2)}), reshape(embeddings, {rows, embeddings.dim(2)}));
  return mean(lp);
}

}  // namespace gadet
