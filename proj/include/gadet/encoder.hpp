#pragma once

// Conditional distribution encoder: an LSTM runs over each channel's series,
// and at every step a graph convolution mixes the hidden states through the
// window's adjacency:
//
//   X^t = ReLU(A H^t W1 + H^{t-1} W2) W3
//
// The per-step outputs are concatenated (or averaged) over time into the node
// embeddings that condition the flow and feed node alignment.

#include <cmath>
#include <string>
#include <vector>

#include "gadet/dynamic_graph.hpp"
#include "gadet/error.hpp"
#include "gadet/random.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

enum class EmbeddingReduce { concat, mean };

struct EncoderParams {
  Tensor w_ih;  // [1, 4h]   gate order: input, forget, cell, output
  Tensor w_hh;  // [h, 4h]
  Tensor bias;  // [4h]
  Tensor w1;    // [h, h]
  Tensor w2;    // [h, h]
  Tensor w3;    // [h, d_step]

  static EncoderParams init(std::size_t hidden, std::size_t d_step, Rng& rng) {
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
    EncoderParams p;
    p.w_ih = uniform_tensor({1, 4 * hidden}, -sh, sh, rng, true);
    p.w_hh = uniform_tensor({hidden, 4 * hidden}, -sh, sh, rng, true);
    p.bias = Tensor::zeros({4 * hidden}, true);
    p.w1 = uniform_tensor({hidden, hidden}, -sh, sh, rng, true);
    p.w2 = uniform_tensor({hidden, hidden}, -sh, sh, rng, true);
    p.w3 = uniform_tensor({hidden, d_step}, -sh, sh, rng, true);
    return p;
  }

  std::size_t hidden() const { return w_hh.dim(0); }
  std::size_t d_step() const { return w3.dim(1); }
  std::vector<Tensor> tensors() const { return {w_ih, w_hh, bias, w1, w2, w3}; }
};

inline std::size_t embedding_dim(std::size_t window, std::size_t d_step, EmbeddingReduce reduce) {
  return reduce == EmbeddingReduce::concat ? window * d_step : d_step;
}

// Returns embeddings [B, N, d]; also stores them on `g`.
inline Tensor encode(GraphBatch& g, const EncoderParams& p, EmbeddingReduce reduce = EmbeddingReduce::concat) {
  const std::size_t bs = g.features.dim(0), n = g.features.dim(1), t_len = g.features.dim(2);
  const std::size_t h = p.hidden(), rows = bs * n;
  if (g.adjacency.dim(0) != bs || g.adjacency.dim(1) != n)
    throw ContractError("adjacency " + shape_str(g.adjacency.shape()) + " does not match features " +
                        shape_str(g.features.shape()));
  Tensor series = reshape(g.features, {rows, t_len});
  Tensor hidden_prev = Tensor::zeros({rows, h});
  Tensor cell = Tensor::zeros({rows, h});
  std::vector<Tensor> steps;
  steps.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor gates = matmul(slice_last(series, t, t + 1), p.w_ih) + matmul(hidden_prev, p.w_hh) + p.bias;
    Tensor in_gate = sigmoid(slice_last(gates, 0, h));
    Tensor forget_gate = sigmoid(slice_last(gates, h, 2 * h));
    Tensor candidate = tanh(slice_last(gates, 2 * h, 3 * h));
    Tensor out_gate = sigmoid(slice_last(gates, 3 * h, 4 * h));
    cell = forget_gate * cell + in_gate * candidate;
    Tensor hidden = out_gate * tanh(cell);

    Tensor mixed = reshape(bmm(g.adjacency, reshape(hidden, {bs, n, h})), {rows, h});
    Tensor conv = relu(matmul(mixed, p.w1) + matmul(hidden_prev, p.w2));
    steps.push_back(matmul(conv, p.w3));
    hidden_prev = hidden;
  }
  Tensor emb;
  if (reduce == EmbeddingReduce::concat) {
    emb = concat_last(steps);
  } else {
    emb = steps[0];
    for (std::size_t t = 1; t < t_len; ++t) emb = emb + steps[t];
    emb = scale(emb, 1.0 / static_cast<double>(t_len));
  }
  g.embeddings = reshape(emb, {bs, n, emb.shape().back()});
  return g.embeddings;
}

// Channel n's embedding in window b: the flow's condition vector.
inline std::vector<double> condition_vector(const Tensor& embeddings, std::size_t b, std::size_t n) {
  if (embeddings.rank() != 3) throw ContractError("embeddings must be [B,N,d]");
  if (b >= embeddings.dim(0) || n >= embeddings.dim(1))
    throw ContractError("condition index (" + std::to_string(b) + "," + std::to_string(n) + ") out of range for " +
                        shape_str(embeddings.shape()));
  const std::size_t d = embeddings.dim(2);
  auto v = embeddings.values();
  const std::size_t off = (b * embeddings.dim(1) + n) * d;
  return {v.begin() + off, v.begin() + off + d};
}

}  // namespace gadet
