#pragma once

// Joint training (loss = mean D_GA - mean flow log-likelihood), window
// scoring S_b = D_GA - mean_n log p(x_n^b), the IQR threshold over training
// scores, and checkpoints.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gadet/data_io.hpp"
#include "gadet/dynamic_graph.hpp"
#include "gadet/encoder.hpp"
#include "gadet/error.hpp"
#include "gadet/flow.hpp"
#include "gadet/metrics.hpp"
#include "gadet/optim.hpp"
#include "gadet/ot.hpp"
#include "gadet/random.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

enum class Ablation { full, no_wd, no_gwd, no_ga };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_wd: return "no_wd";
    case Ablation::no_gwd: return "no_gwd";
    case Ablation::no_ga: return "no_ga";
  }
  return "?";
}

inline AlignTerms terms_for(Ablation a) {
  return {a == Ablation::full || a == Ablation::no_gwd, a == Ablation::full || a == Ablation::no_wd};
}

struct TrainConfig {
  std::size_t window = 40;
  std::size_t stride = 10;
  std::size_t batch = 16;
  std::size_t epochs = 60;
  double learning_rate = 0.002;
  double lambda = 0.1;
  double beta = 0.05;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;
  OmegaMode omega_mode = OmegaMode::mean;
  KeyIndex attention_key_index = KeyIndex::j;
  std::size_t hidden = 32;
  std::size_t d_step = 8;
  std::size_t flow_depth = 2;
  EmbeddingReduce embedding_reduce = EmbeddingReduce::concat;
  bool score_lambda_scaled = false;
  double clip_norm = 0.0;
  double flow_init_sd = 0.01;
  int sinkhorn_iter = 200;
  double sinkhorn_tol = 1e-7;
  int gw_outer = 20;
  unsigned threads = 1;

  // Full-scale experiment settings; window 80/100 and batch 512 are also used
  // for the larger datasets.
  static TrainConfig paper_scale() {
    TrainConfig c;
    c.window = 60;
    c.batch = 256;
    return c;
  }

  BatchAlignConfig align() const {
    BatchAlignConfig a;
    a.lambda = lambda;
    a.beta = beta;
    a.omega = omega_mode;
    a.terms = terms_for(ablation);
    a.solver = SolverOptions{sinkhorn_iter, sinkhorn_tol, gw_outer, sinkhorn_tol};
    a.threads = threads;
    return a;
  }
};

// ---------------------------------------------------------------------------
// Flat key=value view of TrainConfig, shared by checkpoints and config files.

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, p);
}

inline double parse_hexfloat(std::string_view s) {
  double v = 0.0;
  bool neg = false;
  if (!s.empty() && s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("malformed hex float '" + std::string(s) + "'");
  return neg ? -v : v;
}

template <class E>
E parse_enum(const std::string& key, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  for (auto& [name, e] : options)
    if (value == name) return e;
  std::string allowed;
  for (auto& [name, e] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected one of: " + allowed + ")");
}

inline double parse_number(const std::string& key, const std::string& value) {
  double v;
  if (!parse_double(value, v)) throw ConfigError("invalid numeric value '" + value + "' for " + key);
  return v;
}

inline std::size_t parse_count(const std::string& key, const std::string& value) {
  double v = parse_number(key, value);
  if (v < 0 || v != std::floor(v)) throw ConfigError(key + " must be a nonnegative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + " must be true or false, got '" + value + "'");
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  auto num = [](double v) { return detail::format_double(v); };
  return {
      {"window", std::to_string(c.window)},
      {"stride", std::to_string(c.stride)},
      {"batch", std::to_string(c.batch)},
      {"epochs", std::to_string(c.epochs)},
      {"learning_rate", num(c.learning_rate)},
      {"lambda", num(c.lambda)},
      {"beta", num(c.beta)},
      {"dropout", num(c.dropout)},
      {"seed", std::to_string(c.seed)},
      {"ablation", to_string(c.ablation)},
      {"omega_mode", c.omega_mode == OmegaMode::mean ? "mean" : "concat"},
      {"attention_key_index", c.attention_key_index == KeyIndex::j ? "j" : "i"},
      {"hidden", std::to_string(c.hidden)},
      {"d_step", std::to_string(c.d_step)},
      {"flow_depth", std::to_string(c.flow_depth)},
      {"embedding_reduce", c.embedding_reduce == EmbeddingReduce::concat ? "concat" : "mean"},
      {"score_lambda_scaled", c.score_lambda_scaled ? "true" : "false"},
      {"clip_norm", num(c.clip_norm)},
      {"flow_init_sd", num(c.flow_init_sd)},
      {"sinkhorn_iter", std::to_string(c.sinkhorn_iter)},
      {"sinkhorn_tol", num(c.sinkhorn_tol)},
      {"gw_outer", std::to_string(c.gw_outer)},
      {"threads", std::to_string(c.threads)},
  };
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "window") c.window = parse_count(key, value);
  else if (key == "stride") c.stride = parse_count(key, value);
  else if (key == "batch") c.batch = parse_count(key, value);
  else if (key == "epochs") c.epochs = parse_count(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number(key, value);
  else if (key == "lambda") c.lambda = parse_number(key, value);
  else if (key == "beta") c.beta = parse_number(key, value);
  else if (key == "dropout") c.dropout = parse_number(key, value);
  else if (key == "seed") c.seed = parse_count(key, value);
  else if (key == "ablation")
    c.ablation = parse_enum<Ablation>(key, value, {{"full", Ablation::full}, {"no_wd", Ablation::no_wd},
                                                   {"no_gwd", Ablation::no_gwd}, {"no_ga", Ablation::no_ga}});
  else if (key == "omega_mode")
    c.omega_mode = parse_enum<OmegaMode>(key, value, {{"mean", OmegaMode::mean}, {"concat", OmegaMode::concat}});
  else if (key == "attention_key_index")
    c.attention_key_index = parse_enum<KeyIndex>(key, value, {{"j", KeyIndex::j}, {"i", KeyIndex::i}});
  else if (key == "hidden") c.hidden = parse_count(key, value);
  else if (key == "d_step") c.d_step = parse_count(key, value);
  else if (key == "flow_depth") c.flow_depth = parse_count(key, value);
  else if (key == "embedding_reduce")
    c.embedding_reduce = parse_enum<EmbeddingReduce>(
        key, value, {{"concat", EmbeddingReduce::concat}, {"mean", EmbeddingReduce::mean}});
  else if (key == "score_lambda_scaled") c.score_lambda_scaled = parse_bool(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_number(key, value);
  else if (key == "flow_init_sd") c.flow_init_sd = parse_number(key, value);
  else if (key == "sinkhorn_iter") c.sinkhorn_iter = static_cast<int>(parse_count(key, value));
  else if (key == "sinkhorn_tol") c.sinkhorn_tol = parse_number(key, value);
  else if (key == "gw_outer") c.gw_outer = static_cast<int>(parse_count(key, value));
  else if (key == "threads") c.threads = static_cast<unsigned>(parse_count(key, value));
  else throw ConfigError("unknown configuration key '" + key + "'");
}

inline void validate(const TrainConfig& c) {
  if (c.window < 1 || c.stride < 1) throw ConfigError("window and stride must be positive");
  if (c.batch < 2) throw ConfigError("batch must be at least 2 for batch alignment");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (c.lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (!(c.beta > 0.0)) throw ConfigError("beta must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (c.hidden < 1 || c.d_step < 1 || c.flow_depth < 1) throw ConfigError("hidden, d_step and flow_depth must be positive");
}

// Reads `key = value` lines; '#' starts a comment.
inline void apply_config_file(TrainConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto t = detail::trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
  }
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  TrainConfig cfg;
  std::size_t channels = 0;
  AttentionParams attention;
  EncoderParams encoder;
  FlowModel flow;
  std::vector<double> norm_mean, norm_std;
  IqrFence fence;

  static Model init(const TrainConfig& cfg, std::size_t channels, Rng& rng) {
    Model m;
    m.cfg = cfg;
    m.channels = channels;
    m.attention = AttentionParams::init(cfg.window, rng);
    m.encoder = EncoderParams::init(cfg.hidden, cfg.d_step, rng);
    m.flow = FlowModel::random(cfg.window, embedding_dim(cfg.window, cfg.d_step, cfg.embedding_reduce),
                               cfg.flow_depth, cfg.flow_init_sd, rng);
    return m;
  }

  std::vector<std::pair<std::string, Tensor>> named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out{{"attention.wq", attention.wq}, {"attention.wk", attention.wk}};
    const char* enc_names[] = {"encoder.w_ih", "encoder.w_hh", "encoder.bias", "encoder.w1", "encoder.w2", "encoder.w3"};
    auto enc = encoder.tensors();
    for (std::size_t k = 0; k < enc.size(); ++k) out.emplace_back(enc_names[k], enc[k]);
    const char* flow_names[] = {"scale_w", "scale_c", "scale_b", "shift_w", "shift_c", "shift_b"};
    for (std::size_t l = 0; l < flow.depth(); ++l) {
      auto ts = flow.layers()[l].tensors();
      for (std::size_t k = 0; k < ts.size(); ++k) out.emplace_back("flow." + std::to_string(l) + "." + flow_names[k], ts[k]);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
  }
};

// Tape pieces for one batch.
struct BatchForward {
  GraphBatch graphs;
  Tensor embeddings;
  Tensor log_prob;        // [B*N] per-channel log-likelihood
  Tensor log_likelihood;  // scalar mean of log_prob
  std::vector<WindowAlignment> alignments;
  Tensor alignment;       // scalar mean lambda*(WD+GWD)
  Tensor loss;
};

inline BatchForward forward_batch(const Model& m, const WindowBatch& wb, bool training, Rng* rng) {
  BatchForward f;
  GraphOptions go{m.cfg.attention_key_index, m.cfg.dropout, training, rng};
  f.graphs = build_graphs(wb.windows, m.attention, go);
  f.embeddings = encode(f.graphs, m.encoder, m.cfg.embedding_reduce);
  const std::size_t rows = wb.size() * m.channels;
  f.log_prob = m.flow.log_prob(reshape(f.graphs.features, {rows, m.cfg.window}),
                               reshape(f.embeddings, {rows, f.embeddings.dim(2)}));
  f.log_likelihood = mean(f.log_prob);
  const auto acfg = m.cfg.align();
  if (m.cfg.ablation != Ablation::no_ga && wb.size() >= 2) {
    f.alignments = batch_alignment(f.embeddings, f.graphs.adjacency, acfg);
    f.alignment = alignment_loss(f.embeddings, f.graphs.adjacency, f.alignments, acfg);
    f.loss = f.alignment - f.log_likelihood;
  } else {
    f.alignment = Tensor::scalar(0.0);
    f.loss = scale(f.log_likelihood, -1.0);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Scoring

struct WindowScore {
  std::size_t start = 0;
  int label = 0;
  double d_ga = 0.0;
  double nll = 0.0;
  double score = 0.0;
  int predicted = 0;
};

struct ScoreReport {
  std::vector<WindowScore> windows;  // sorted by start
  double threshold = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();  // NaN when undefined
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::vector<AdjacencyRecord> adjacency;  // filled when requested
};

// Scores every window of `ds` (already normalised). Batches interleave the
// windows so each batch's reference graph is drawn from across the series.
// Window starts are reported as rows of the source file (ds.offset added).
inline std::vector<WindowScore> score_windows(const Model& m, const SeriesDataset& ds,
                                              std::vector<AdjacencyRecord>* adjacency = nullptr) {
  if (ds.channels() != m.channels)
    throw ContractError("dataset has " + std::to_string(ds.channels()) + " channels, model expects " +
                        std::to_string(m.channels));
  auto batches = make_windows(ds, m.cfg.window, m.cfg.stride, m.cfg.batch, PartialBatch::keep, BatchOrder::interleaved);
  std::vector<WindowScore> out;
  for (const auto& wb : batches) {
    BatchForward f = forward_batch(m, wb, false, nullptr);
    std::vector<std::size_t> rows(wb.starts);
    for (auto& r : rows) r += ds.offset;
    if (adjacency) {
      auto recs = adjacency_records(f.graphs, rows);
      adjacency->insert(adjacency->end(), recs.begin(), recs.end());
    }
    auto lp = f.log_prob.values();
    for (std::size_t b = 0; b < wb.size(); ++b) {
      WindowScore w;
      w.start = rows[b];
      w.label = wb.labels[b];
      if (!f.alignments.empty()) {
        const auto& a = f.alignments[b];
        w.d_ga = m.cfg.score_lambda_scaled ? a.d_ga : a.wd + a.gwd;
      }
      double s = 0.0;
      for (std::size_t n = 0; n < m.channels; ++n) s += lp[b * m.channels + n];
      w.nll = -s / static_cast<double>(m.channels);
      w.score = w.d_ga + w.nll;
      out.push_back(w);
    }
  }
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.start < b.start; });
  if (adjacency)
    std::sort(adjacency->begin(), adjacency->end(), [](auto& a, auto& b) { return a.window_start < b.window_start; });
  return out;
}

inline ScoreReport score(const Model& m, const SeriesDataset& ds, bool with_adjacency = false) {
  ScoreReport r;
  r.windows = score_windows(m, ds, with_adjacency ? &r.adjacency : nullptr);
  r.threshold = m.fence.threshold;
  std::vector<double> s;
  std::vector<int> l;
  for (auto& w : r.windows) {
    w.predicted = w.score > r.threshold;
    s.push_back(w.score);
    l.push_back(w.label);
    if (w.predicted) (w.label ? r.tp : r.fp)++;
    else (w.label ? r.fn : r.tn)++;
  }
  if (ds.labeled && r.tp + r.fn > 0 && r.fp + r.tn > 0) r.auc = auc_roc(s, l);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double alignment = 0.0;
  double log_likelihood = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> curve;
};

inline TrainResult train(const SeriesDataset& train_ds, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  validate(cfg);
  if (train_ds.length() <= cfg.window)
    throw ConfigError("training split (" + std::to_string(train_ds.length()) + " rows) must be longer than the window");
  Rng rng(cfg.seed);
  TrainResult res;
  Model& m = res.model;
  m = Model::init(cfg, train_ds.channels(), rng);
  m.norm_mean = train_ds.mean;
  m.norm_std = train_ds.stddev;

  const std::size_t count = num_windows(train_ds.length(), cfg.window, cfg.stride);
  if (count < cfg.batch)
    throw ConfigError("training split yields " + std::to_string(count) + " windows, fewer than one batch of " +
                      std::to_string(cfg.batch));
  std::vector<std::size_t> order(count);
  for (std::size_t w = 0; w < count; ++w) order[w] = w * cfg.stride;

  Adam opt(m.parameters(), AdamOptions{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochStats st{epoch};
    std::size_t nb = 0;
    for (std::size_t k = 0; k + cfg.batch <= count; k += cfg.batch, ++nb) {
      std::vector<std::size_t> starts(order.begin() + k, order.begin() + k + cfg.batch);
      WindowBatch wb = gather_windows(train_ds, cfg.window, starts);
      BatchForward f = forward_batch(m, wb, true, &rng);
      const double loss = f.loss.item();
      if (!std::isfinite(loss))
        throw NumericError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(nb + 1));
      opt.zero_grad();
      backward(f.loss);
      opt.step();
      st.loss += loss;
      st.alignment += f.alignment.item();
      st.log_likelihood += f.log_likelihood.item();
    }
    st.loss /= static_cast<double>(nb);
    st.alignment /= static_cast<double>(nb);
    st.log_likelihood /= static_cast<double>(nb);
    res.curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }

  std::vector<double> train_scores;
  for (const auto& w : score_windows(m, train_ds)) train_scores.push_back(w.score);
  m.fence = iqr_threshold(train_scores);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint: line-oriented text. Floating values are hexadecimal so a
// save/load/save cycle is byte-identical.
//
//   gadet-checkpoint <version>
//   config <key> <value>          (one per TrainConfig field)
//   channels <N>
//   norm_mean <hex>...  /  norm_std <hex>...
//   fence <q1> <q3> <threshold>
//   tensor <name> <rank> <dims...>
//   <hex values>
//   end

inline constexpr int kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Model& m) {
  std::ostringstream os;
  os << "gadet-checkpoint " << kCheckpointVersion << '\n';
  for (auto& [k, v] : config_entries(m.cfg)) os << "config " << k << ' ' << v << '\n';
  os << "channels " << m.channels << '\n';
  os << "norm_mean";
  for (double v : m.norm_mean) os << ' ' << detail::hexfloat(v);
  os << "\nnorm_std";
  for (double v : m.norm_std) os << ' ' << detail::hexfloat(v);
  os << "\nfence " << detail::hexfloat(m.fence.q1) << ' ' << detail::hexfloat(m.fence.q3) << ' '
     << detail::hexfloat(m.fence.threshold) << '\n';
  for (auto& [name, t] : m.named_tensors()) {
    os << "tensor " << name << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? " " : "") << detail::hexfloat(t[i]);
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(m);
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

inline Model parse_checkpoint(const std::string& text, const std::string& origin = "<checkpoint>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto next = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw fail("unexpected end of file");
    ++lineno;
    return std::istringstream(line);
  };

  {
    auto ls = next();
    std::string magic;
    int version = -1;
    ls >> magic >> version;
    if (magic != "gadet-checkpoint") throw fail("not a checkpoint file");
    if (version != kCheckpointVersion)
      throw fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                 std::to_string(kCheckpointVersion) + ")");
  }
  Model m;
  std::map<std::string, Tensor> tensors;
  bool ended = false;
  while (!ended) {
    auto ls = next();
    std::string tag;
    ls >> tag;
    try {
      if (tag == "config") {
        std::string k, v;
        ls >> k >> v;
        set_config_value(m.cfg, k, v);
      } else if (tag == "channels") {
        ls >> m.channels;
      } else if (tag == "norm_mean" || tag == "norm_std") {
        auto& dst = tag == "norm_mean" ? m.norm_mean : m.norm_std;
        std::string tok;
        while (ls >> tok) dst.push_back(detail::parse_hexfloat(tok));
      } else if (tag == "fence") {
        std::string a, b, c;
        ls >> a >> b >> c;
        m.fence = {detail::parse_hexfloat(a), detail::parse_hexfloat(b), detail::parse_hexfloat(c)};
      } else if (tag == "tensor") {
        std::string name;
        std::size_t rank = 0;
        ls >> name >> rank;
        Shape shape(rank);
        for (auto& d : shape) ls >> d;
        if (!ls || rank == 0) throw fail("malformed tensor header");
        auto vs = next();
        std::vector<double> data;
        std::string tok;
        while (vs >> tok) data.push_back(detail::parse_hexfloat(tok));
        tensors[name] = Tensor::from(shape, std::move(data), true);
      } else if (tag == "end") {
        ended = true;
      } else {
        throw fail("unknown record '" + tag + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw fail(e.what());
    }
  }

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw fail("missing tensor '" + name + "'");
    return it->second;
  };
  const auto& c = m.cfg;
  m.attention = {take("attention.wq"), take("attention.wk")};
  m.encoder.w_ih = take("encoder.w_ih");
  m.encoder.w_hh = take("encoder.w_hh");
  m.encoder.bias = take("encoder.bias");
  m.encoder.w1 = take("encoder.w1");
  m.encoder.w2 = take("encoder.w2");
  m.encoder.w3 = take("encoder.w3");
  m.flow = FlowModel::identity(c.window, embedding_dim(c.window, c.d_step, c.embedding_reduce), c.flow_depth);
  const char* flow_names[] = {"scale_w", "scale_c", "scale_b", "shift_w", "shift_c", "shift_b"};
  for (std::size_t l = 0; l < c.flow_depth; ++l) {
    auto& L = m.flow.layers()[l];
    Tensor* slots[] = {&L.scale_w, &L.scale_c, &L.scale_b, &L.shift_w, &L.shift_c, &L.shift_b};
    for (std::size_t k = 0; k < 6; ++k) {
      Tensor t = take("flow." + std::to_string(l) + "." + flow_names[k]);
      if (t.shape() != slots[k]->shape()) throw fail("tensor flow." + std::to_string(l) + "." + flow_names[k] + " has wrong shape");
      *slots[k] = t;
    }
  }
  if (m.attention.wq.shape() != Shape{c.window, c.window}) throw fail("attention shape does not match window");
  if (m.norm_mean.size() != m.channels || m.norm_std.size() != m.channels)
    throw fail("normalization statistics do not match channel count");
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Report export

inline void write_score_csv(const ScoreReport& r, std::ostream& os) {
  os << "window_start,label,d_ga,nll,score,predicted\n";
  for (const auto& w : r.windows)
    os << w.start << ',' << w.label << ',' << detail::format_double(w.d_ga) << ',' << detail::format_double(w.nll)
       << ',' << detail::format_double(w.score) << ',' << w.predicted << '\n';
}

inline void write_score_csv(const ScoreReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write score report '" + path + "'");
  write_score_csv(r, out);
}

}  // namespace gadet
