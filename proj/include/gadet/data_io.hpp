#pragma once

// CSV ingestion, train/test splitting with train-fitted normalisation,
// sliding windows, and a synthetic generator whose anomalies rewire the
// coupling between channels.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gadet/error.hpp"
#include "gadet/random.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

struct SeriesDataset {
  std::vector<std::string> channel_names;
  std::vector<double> values;  // time-major, length() x channels()
  std::vector<int> labels;
  bool labeled = true;
  // Per-channel statistics used to normalise `values`; empty when raw.
  std::vector<double> mean;
  std::vector<double> stddev;
  std::size_t offset = 0;  // row of the source file where this split starts

  std::size_t channels() const { return channel_names.size(); }
  std::size_t length() const { return labels.size(); }
  double at(std::size_t t, std::size_t n) const { return values[t * channels() + n]; }
};

struct SplitDataset {
  SeriesDataset train;
  SeriesDataset test;
  std::vector<std::string> warnings;
};

struct CsvOptions {
  std::string label_column = "label";
  bool unlabeled = false;  // ignore the label column even when present
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

// Reads a whole CSV without splitting or normalising.
inline SeriesDataset read_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header row");
  auto header = detail::split_commas(line);
  std::ptrdiff_t label_col = -1;
  SeriesDataset ds;
  std::vector<std::size_t> channel_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == opts.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
      continue;
    }
    ds.channel_names.emplace_back(header[c]);
    channel_cols.push_back(c);
  }
  ds.labeled = label_col >= 0 && !opts.unlabeled;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw ParseError(path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    for (std::size_t k = 0; k < channel_cols.size(); ++k) {
      double v;
      if (!detail::parse_double(cells[channel_cols[k]], v))
        throw ParseError(path + ": non-numeric cell '" + std::string(cells[channel_cols[k]]) + "' at row " +
                         std::to_string(row) + ", column '" + ds.channel_names[k] + "'");
      ds.values.push_back(v);
    }
    int label = 0;
    if (ds.labeled) {
      double v;
      if (!detail::parse_double(cells[label_col], v) || (v != 0.0 && v != 1.0))
        throw ParseError(path + ": label at row " + std::to_string(row) + " is not 0 or 1");
      label = static_cast<int>(v);
    }
    ds.labels.push_back(label);
  }
  return ds;
}

inline void write_csv(const SeriesDataset& ds, const std::string& path, const std::string& label_column = "label") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& name : ds.channel_names) out << name << ',';
  out << label_column << '\n';
  for (std::size_t t = 0; t < ds.length(); ++t) {
    for (std::size_t n = 0; n < ds.channels(); ++n) out << detail::format_double(ds.at(t, n)) << ',';
    out << ds.labels[t] << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline SeriesDataset slice_rows(const SeriesDataset& ds, std::size_t begin, std::size_t end) {
  SeriesDataset out;
  out.channel_names = ds.channel_names;
  out.labeled = ds.labeled;
  out.offset = ds.offset + begin;
  out.values.assign(ds.values.begin() + begin * ds.channels(), ds.values.begin() + end * ds.channels());
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  return out;
}

// Applies (x - mean) / std per channel using externally fitted statistics.
inline void apply_normalization(SeriesDataset& ds, const std::vector<double>& mean, const std::vector<double>& sd) {
  const std::size_t n = ds.channels();
  if (mean.size() != n || sd.size() != n) throw ContractError("normalization statistics do not match channel count");
  for (std::size_t t = 0; t < ds.length(); ++t)
    for (std::size_t c = 0; c < n; ++c) ds.values[t * n + c] = (ds.values[t * n + c] - mean[c]) / sd[c];
  ds.mean = mean;
  ds.stddev = sd;
}

// Per-channel mean and population std; constant channels get std 1.
inline void fit_normalization(const SeriesDataset& ds, std::vector<double>& mean, std::vector<double>& sd,
                              std::vector<std::string>* warnings = nullptr) {
  const std::size_t n = ds.channels(), len = ds.length();
  mean.assign(n, 0.0);
  sd.assign(n, 0.0);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < n; ++c) mean[c] += ds.at(t, c);
  for (auto& m : mean) m /= static_cast<double>(len);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < n; ++c) sd[c] += (ds.at(t, c) - mean[c]) * (ds.at(t, c) - mean[c]);
  for (std::size_t c = 0; c < n; ++c) {
    sd[c] = std::sqrt(sd[c] / static_cast<double>(len));
    if (sd[c] < 1e-12) {
      sd[c] = 1.0;
      if (warnings) warnings->push_back("channel '" + ds.channel_names[c] + "' is constant; std clamped to 1");
    }
  }
}

// Chronological split at `split_fraction`; statistics come from train only.
inline SplitDataset split_and_normalize(const SeriesDataset& raw, double split_fraction = 0.6) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  if (raw.channels() < 2) throw ConfigError("need at least 2 channels, got " + std::to_string(raw.channels()));
  const auto cut = static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(raw.length())));
  if (cut == 0 || cut >= raw.length()) throw ConfigError("split leaves an empty train or test part");
  SplitDataset s;
  s.train = slice_rows(raw, 0, cut);
  s.test = slice_rows(raw, cut, raw.length());
  std::vector<double> mean, sd;
  fit_normalization(s.train, mean, sd, &s.warnings);
  apply_normalization(s.train, mean, sd);
  apply_normalization(s.test, mean, sd);
  return s;
}

inline SplitDataset load_csv(const std::string& path, double split_fraction = 0.6, const CsvOptions& opts = {}) {
  return split_and_normalize(read_csv(path, opts), split_fraction);
}

// ---------------------------------------------------------------------------
// Sliding windows

struct WindowBatch {
  Tensor windows;  // [B, T, N]
  std::vector<std::size_t> starts;
  std::vector<int> labels;
  std::size_t size() const { return starts.size(); }
};

enum class PartialBatch { keep, drop };

// How windows are grouped into batches. `sequential` takes consecutive
// windows; `interleaved` puts window w into batch w mod num_batches so every
// batch spans the whole series.
enum class BatchOrder { sequential, interleaved };

inline std::size_t num_windows(std::size_t length, std::size_t window, std::size_t stride) {
  if (window > length)
    throw ConfigError("window " + std::to_string(window) + " exceeds series length " + std::to_string(length));
  return (length - window) / stride + 1;
}

inline WindowBatch gather_windows(const SeriesDataset& ds, std::size_t window, const std::vector<std::size_t>& starts) {
  const std::size_t n = ds.channels();
  std::vector<double> buf;
  buf.reserve(starts.size() * window * n);
  WindowBatch b;
  for (auto s : starts) {
    buf.insert(buf.end(), ds.values.begin() + s * n, ds.values.begin() + (s + window) * n);
    int lab = 0;
    for (std::size_t t = s; t < s + window; ++t) lab |= ds.labels[t];
    b.labels.push_back(lab);
  }
  b.starts = starts;
  b.windows = Tensor::from({starts.size(), window, n}, std::move(buf));
  return b;
}

inline std::vector<WindowBatch> make_windows(const SeriesDataset& ds, std::size_t window, std::size_t stride,
                                             std::size_t batch, PartialBatch partial = PartialBatch::keep,
                                             BatchOrder order = BatchOrder::sequential) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (batch < 2) throw ConfigError("batch size must be >= 2");
  if (window < 1) throw ConfigError("window must be >= 1");
  const std::size_t count = num_windows(ds.length(), window, stride);
  std::vector<std::vector<std::size_t>> groups;
  if (order == BatchOrder::sequential) {
    for (std::size_t w = 0; w < count; w += batch) {
      std::vector<std::size_t> g;
      for (std::size_t k = w; k < std::min(count, w + batch); ++k) g.push_back(k * stride);
      groups.push_back(std::move(g));
    }
    if (partial == PartialBatch::drop && !groups.empty() && groups.back().size() < batch) groups.pop_back();
  } else {
    std::size_t nb = (count + batch - 1) / batch;
    if (partial == PartialBatch::drop) nb = count / batch;
    groups.resize(nb);
    for (std::size_t w = 0; w < count && nb > 0; ++w)
      if (groups[w % nb].size() < batch) groups[w % nb].push_back(w * stride);
  }
  std::vector<WindowBatch> out;
  for (const auto& g : groups)
    if (!g.empty()) out.push_back(gather_windows(ds, window, g));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

enum class AnomalyKind { spike, interdependency_shift };

struct AnomalyInterval {
  AnomalyKind kind;
  std::size_t begin;
  std::size_t end;  // exclusive
};

struct SynthSpec {
  std::size_t channels = 5;
  std::size_t length = 2000;
  std::vector<AnomalyInterval> anomalies;
  double noise = 0.3;
};

// Normal regime: channel n = sum_k M[n,k] * s_k(t) + noise, where source k is
// a sinusoid of its own period and M has unit-norm rows dominated by the
// diagonal. Inside an interdependency_shift interval row n of M is rotated by
// n places, so every channel is driven by the same dominant source: the
// coupling graph changes while each channel's variance is unchanged.
inline SeriesDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  const std::size_t n = spec.channels, len = spec.length;
  if (n < 2) throw ConfigError("synthetic data needs at least 2 channels");
  auto sorted = spec.anomalies;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.begin < b.begin; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].begin >= sorted[i].end || sorted[i].end > len)
      throw ConfigError("anomaly interval [" + std::to_string(sorted[i].begin) + "," + std::to_string(sorted[i].end) +
                        ") is empty or outside [0," + std::to_string(len) + ")");
    if (i > 0 && sorted[i].begin < sorted[i - 1].end)
      throw ConfigError("anomaly intervals [" + std::to_string(sorted[i - 1].begin) + "," +
                        std::to_string(sorted[i - 1].end) + ") and [" + std::to_string(sorted[i].begin) + "," +
                        std::to_string(sorted[i].end) + ") overlap");
  }

  Rng rng(seed);
  std::vector<double> period(n), phase(n);
  for (std::size_t k = 0; k < n; ++k) {
    period[k] = 8.0 * std::pow(1.5, static_cast<double>(k)) * rng.uniform(0.9, 1.1);
    phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> mix(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double v = r == k ? 1.0 : (rng.uniform() < 0.4 ? rng.uniform(-0.4, 0.4) : 0.0);
      mix[r * n + k] = v;
      norm += v * v;
    }
    for (std::size_t k = 0; k < n; ++k) mix[r * n + k] /= std::sqrt(norm);
  }
  std::vector<double> shifted(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) shifted[r * n + k] = mix[r * n + (k + r) % n];

  std::vector<int> regime(len, 0);  // 0 normal, 1 shift, 2 spike
  for (const auto& a : sorted)
    for (std::size_t t = a.begin; t < a.end; ++t) regime[t] = a.kind == AnomalyKind::spike ? 2 : 1;
  const std::size_t spike_channel = rng.index(n);

  SeriesDataset ds;
  for (std::size_t c = 0; c < n; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  ds.values.resize(len * n);
  ds.labels.assign(len, 0);
  std::vector<double> src(n);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t k = 0; k < n; ++k)
      src[k] = std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period[k] + phase[k]);
    const auto& m = regime[t] == 1 ? shifted : mix;
    for (std::size_t c = 0; c < n; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < n; ++k) v += m[c * n + k] * src[k];
      ds.values[t * n + c] = v + spec.noise * rng.normal();
    }
    if (regime[t] == 2 && rng.uniform() < 0.3)
      ds.values[t * n + spike_channel] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(3.0, 5.0);
    ds.labels[t] = regime[t] != 0;
  }
  return ds;
}

}  // namespace gadet
