#pragma once

// Per-window interdependency graphs. Every channel of a window is a node; the
// adjacency is a row-softmax of scaled query/key products between the
// channels' series.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "gadet/data_io.hpp"
#include "gadet/error.hpp"
#include "gadet/random.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

struct AttentionParams {
  Tensor wq;  // [T, T]
  Tensor wk;  // [T, T]

  static AttentionParams init(std::size_t window, Rng& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(window));
    return {normal_tensor({window, window}, sd, rng, true), normal_tensor({window, window}, sd, rng, true)};
  }
  std::size_t window() const { return wq.dim(0); }
};

// Which node indexes the key in e_ij: `j` is standard self-attention; `i`
// pairs node i's query with its own key, giving uniform rows.
enum class KeyIndex { j, i };

struct GraphOptions {
  KeyIndex key_index = KeyIndex::j;
  double dropout = 0.0;  // applied to logits when `training`
  bool training = false;
  Rng* rng = nullptr;    // required when dropout is active
};

// A batch of dynamic graphs sharing one node count.
struct GraphBatch {
  Tensor features;    // [B, N, T] channel series
  Tensor adjacency;   // [B, N, N] row-stochastic
  Tensor embeddings;  // [B, N, d], filled by the encoder
  std::size_t batch() const { return adjacency.dim(0); }
  std::size_t nodes() const { return adjacency.dim(1); }
};

inline GraphBatch build_graphs(const Tensor& windows, const AttentionParams& p, const GraphOptions& opts = {}) {
  if (windows.rank() != 3) throw ContractError("windows must be [B,T,N], got " + shape_str(windows.shape()));
  const std::size_t bs = windows.dim(0), t = windows.dim(1), n = windows.dim(2);
  if (p.window() != t)
    throw ContractError("attention parameters are sized for window " + std::to_string(p.window()) +
                        ", windows have length " + std::to_string(t));
  GraphBatch g;
  g.features = transpose(windows);
  Tensor flat = reshape(g.features, {bs * n, t});
  Tensor q = reshape(matmul(flat, transpose(p.wq)), {bs, n, t});
  Tensor k = reshape(matmul(flat, transpose(p.wk)), {bs, n, t});
  Tensor logits;
  if (opts.key_index == KeyIndex::j) {
    logits = bmm(q, transpose(k));
  } else {
    logits = expand_last(reshape(sum_last(q * k), {bs, n, 1}), n);
  }
  logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(t)));
  if (opts.training && opts.dropout > 0.0) {
    if (!opts.rng) throw ContractError("dropout needs a generator");
    std::vector<double> mask(logits.size());
    for (auto& m : mask) m = opts.rng->uniform() < opts.dropout ? 0.0 : 1.0 / (1.0 - opts.dropout);
    logits = logits * Tensor::from(logits.shape(), std::move(mask));
  }
  g.adjacency = softmax_rows(logits);
  return g;
}

// Single-window convenience: window is [T, N].
inline GraphBatch build_graph(const Tensor& window, const AttentionParams& p, const GraphOptions& opts = {}) {
  if (window.rank() != 2) throw ContractError("window must be [T,N], got " + shape_str(window.shape()));
  return build_graphs(reshape(window, {1, window.dim(0), window.dim(1)}), p, opts);
}

struct AdjacencyRecord {
  std::size_t window_start = 0;
  std::size_t nodes = 0;
  std::vector<double> values;  // row-major nodes x nodes
};

inline std::vector<AdjacencyRecord> adjacency_records(const GraphBatch& g, const std::vector<std::size_t>& starts) {
  std::vector<AdjacencyRecord> out;
  const std::size_t n = g.nodes();
  auto v = g.adjacency.values();
  for (std::size_t b = 0; b < g.batch(); ++b)
    out.push_back({starts.at(b), n, std::vector<double>(v.begin() + b * n * n, v.begin() + (b + 1) * n * n)});
  return out;
}

// CSV with columns window_start,i,j,a_ij; one row per adjacency entry.
inline void adjacency_export(const std::vector<AdjacencyRecord>& graphs, const std::string& path) {
  if (graphs.empty()) throw ContractError("adjacency export needs at least one graph");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write adjacency export '" + path + "'");
  out << "window_start,i,j,a_ij\n";
  for (const auto& g : graphs)
    for (std::size_t i = 0; i < g.nodes; ++i)
      for (std::size_t j = 0; j < g.nodes; ++j)
        out << g.window_start << ',' << i << ',' << j << ',' << detail::format_double(g.values[i * g.nodes + j])
            << '\n';
  if (!out) throw IoError("write failed for adjacency export '" + path + "'");
}

inline std::vector<AdjacencyRecord> adjacency_import(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open adjacency file '" + path + "'");
  std::string line;
  std::getline(in, line);
  struct Row {
    std::size_t start, i, j;
    double a;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    auto cells = detail::split_commas(line);
    if (cells.size() != 4) throw ParseError(path + ": malformed adjacency row '" + line + "'");
    double s, i, j, a;
    if (!detail::parse_double(cells[0], s) || !detail::parse_double(cells[1], i) ||
        !detail::parse_double(cells[2], j) || !detail::parse_double(cells[3], a))
      throw ParseError(path + ": non-numeric adjacency row '" + line + "'");
    rows.push_back({static_cast<std::size_t>(s), static_cast<std::size_t>(i), static_cast<std::size_t>(j), a});
  }
  std::vector<AdjacencyRecord> out;
  std::size_t k = 0;
  while (k < rows.size()) {
    std::size_t e = k;
    while (e < rows.size() && rows[e].start == rows[k].start) ++e;
    const auto count = e - k;
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
    if (n * n != count) throw ParseError(path + ": window " + std::to_string(rows[k].start) + " is not square");
    AdjacencyRecord r{rows[k].start, n, std::vector<double>(count)};
    for (std::size_t q = k; q < e; ++q) r.values.at(rows[q].i * n + rows[q].j) = rows[q].a;
    out.push_back(std::move(r));
    k = e;
  }
  return out;
}

}  // namespace gadet
