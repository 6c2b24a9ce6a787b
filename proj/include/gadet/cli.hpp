#pragma once

// Command-line front end: synth | train | score | eval | oracle.
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric, 4 property suite.
// Every command writes a JSON run manifest; `--manifest <file>` replays the
// recorded arguments.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gadet/data_io.hpp"
#include "gadet/error.hpp"
#include "gadet/oracle.hpp"
#include "gadet/train_score.hpp"

namespace gadet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitSuite = 4;

using json = nlohmann::ordered_json;

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// "begin:end" -> [begin, end)
inline AnomalyInterval parse_interval(const std::string& text, AnomalyKind kind) {
  auto colon = text.find(':');
  double b = 0, e = 0;
  if (colon == std::string::npos || !detail::parse_double(text.substr(0, colon), b) ||
      !detail::parse_double(text.substr(colon + 1), e) || b < 0 || e < 0 || b != std::floor(b) || e != std::floor(e))
    throw ConfigError("bad interval '" + text + "' (expected begin:end, e.g. --shift 1200:1320)");
  return {kind, static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
}

struct Manifest {
  std::vector<std::string> argv;
  std::string command;
  json config = json::object();
  json inputs = json::object();
  json artifacts = json::object();
  std::optional<std::uint64_t> seed;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  json timings = json::object();

  void input(const std::string& role, const std::string& path) {
    inputs[role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void lap(const std::string& name) {
    timings[name + "_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  void write(const std::string& path) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["inputs"] = inputs;
    j["artifacts"] = artifacts;
    j["timings"] = timings;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path + "'");
    out << j.dump(2) << '\n';
  }
};

inline json config_json(const TrainConfig& c) {
  json j = json::object();
  for (auto& [k, v] : config_entries(c)) j[k] = v;
  return j;
}

inline void write_summary(const ScoreReport& r, const std::string& path, bool labeled) {
  json j;
  j["windows"] = r.windows.size();
  j["threshold"] = r.threshold;
  j["auc"] = std::isnan(r.auc) ? json(nullptr) : json(r.auc);
  j["labeled"] = labeled;
  j["predicted_anomalies"] = r.tp + r.fp;
  j["counts"] = {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write summary '" + path + "'");
  out << j.dump(2) << '\n';
}

inline std::string replace_extension(const std::string& path, const std::string& ext) {
  auto slash = path.find_last_of('/');
  auto dot = path.find_last_of('.');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return path.substr(0, dot) + ext;
  return path + ext;
}

// Registers one flag per TrainConfig key; values are applied after the
// config file so flags take precedence.
class ConfigFlags {
 public:
  void add(CLI::App* app) {
    for (auto& [key, value] : config_entries(TrainConfig{})) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      auto* opt = app->add_option(flag, values_[key], "default " + value);
      options_.emplace_back(key, opt);
    }
    app->add_option("--config", config_file_, "key = value file; flags override it");
    app->add_flag("--paper-scale", paper_scale_, "full-scale defaults (window 60, batch 256)");
  }

  TrainConfig resolve() const {
    TrainConfig c = paper_scale_ ? TrainConfig::paper_scale() : TrainConfig{};
    if (!config_file_.empty()) apply_config_file(c, config_file_);
    for (auto& [key, opt] : options_)
      if (opt->count() > 0) set_config_value(c, key, values_.at(key));
    return c;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
  std::string config_file_;
  bool paper_scale_ = false;
};

inline SeriesDataset load_part(const std::string& path, const Model& m, const std::string& part, double fraction,
                               const CsvOptions& csv) {
  SeriesDataset raw = read_csv(path, csv);
  if (raw.channels() != m.channels)
    throw DataError("'" + path + "' has " + std::to_string(raw.channels()) + " channels, checkpoint expects " +
                        std::to_string(m.channels));
  SeriesDataset ds;
  if (part == "all") {
    ds = raw;
  } else {
    const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(raw.length())));
    ds = part == "train" ? slice_rows(raw, 0, cut) : slice_rows(raw, cut, raw.length());
  }
  apply_normalization(ds, m.norm_mean, m.norm_std);
  return ds;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int run_checked(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gadet: graph-alignment anomaly detection for multivariate time series"};
  app.require_subcommand(0, 1);
  std::string replay;
  app.add_option("--manifest", replay, "replay the run recorded in a manifest");
  std::string manifest_out;
  app.add_option("--manifest-out", manifest_out, "where to write this run's manifest");
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker cap for per-window alignment");

  Manifest man;
  man.argv = args;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic dataset");
  SynthSpec sspec;
  std::vector<std::string> shifts, spikes;
  std::uint64_t sseed = 0;
  std::string sout;
  synth->add_option("--channels", sspec.channels)->check(CLI::PositiveNumber);
  synth->add_option("--length", sspec.length)->check(CLI::PositiveNumber);
  synth->add_option("--noise", sspec.noise);
  synth->add_option("--shift", shifts, "interdependency-shift interval begin:end (repeatable)");
  synth->add_option("--spike", spikes, "spike interval begin:end (repeatable)");
  synth->add_option("--seed", sseed)->required();
  synth->add_option("--out", sout)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "fit a model and write a checkpoint");
  ConfigFlags tflags;
  tflags.add(train_cmd);
  std::string tdata, tout, tcurve, label_column = "label";
  double fraction = 0.6;
  bool unlabeled = false;
  train_cmd->add_option("--data", tdata)->required();
  train_cmd->add_option("--out", tout)->required();
  train_cmd->add_option("--loss-curve", tcurve, "loss curve CSV (default <out>.loss.csv)");
  train_cmd->add_option("--train-fraction", fraction, "chronological train share")->capture_default_str();
  train_cmd->add_option("--label-column", label_column)->capture_default_str();
  train_cmd->add_flag("--unlabeled", unlabeled, "ignore any label column");

  // score / eval share flags
  struct ScoreFlags {
    std::string data, checkpoint, out, summary, graphs, part = "test", label_column = "label";
    double fraction = 0.6;
    bool unlabeled = false;
  };
  ScoreFlags sf, ef;
  auto add_score_flags = [](CLI::App* c, ScoreFlags& f) {
    c->add_option("--data", f.data)->required();
    c->add_option("--checkpoint", f.checkpoint)->required();
    c->add_option("--out", f.out, "per-window report CSV")->required();
    c->add_option("--summary", f.summary, "JSON summary (default <out>.json)");
    c->add_option("--export-graphs", f.graphs, "adjacency CSV (window_start,i,j,a_ij)");
    c->add_option("--part", f.part, "rows to score")->check(CLI::IsMember({"test", "train", "all"}))->capture_default_str();
    c->add_option("--train-fraction", f.fraction)->capture_default_str();
    c->add_option("--label-column", f.label_column)->capture_default_str();
    c->add_flag("--unlabeled", f.unlabeled);
  };
  auto* score_cmd = app.add_subcommand("score", "score windows with a checkpoint");
  add_score_flags(score_cmd, sf);
  auto* eval_cmd = app.add_subcommand("eval", "score labeled windows and report AUC");
  add_score_flags(eval_cmd, ef);

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "run the solver verification suites");
  OracleOptions oopts;
  oracle_cmd->add_option("--seeds", oopts.seeds, "instances for the alignment-identity suite")->capture_default_str();
  oracle_cmd->add_flag("--inject-fault", oopts.inject_fault)->group("");  // harness self-test

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  if (!replay.empty()) {
    std::ifstream in(replay);
    if (!in) throw IoError("cannot open manifest '" + replay + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(replay + ": " + e.what());
    }
    if (!j.contains("argv") || !j["argv"].is_array()) throw ParseError(replay + ": manifest has no argv");
    auto again = j["argv"].get<std::vector<std::string>>();
    if (std::find(again.begin(), again.end(), "--manifest") != again.end())
      throw ParseError(replay + ": manifest argv must not itself replay a manifest");
    return run(again, out, err);
  }

  auto manifest_path = [&](const std::string& primary) {
    return manifest_out.empty() ? primary + ".manifest.json" : manifest_out;
  };

  if (synth->parsed()) {
    man.command = "synth";
    for (auto& s : shifts) sspec.anomalies.push_back(parse_interval(s, AnomalyKind::interdependency_shift));
    for (auto& s : spikes) sspec.anomalies.push_back(parse_interval(s, AnomalyKind::spike));
    SeriesDataset ds = synth_generate(sspec, sseed);
    write_csv(ds, sout);
    man.seed = sseed;
    man.config = {{"channels", sspec.channels}, {"length", sspec.length}, {"noise", sspec.noise},
                  {"shift", shifts}, {"spike", spikes}};
    man.artifacts["dataset"] = sout;
    man.lap("total");
    man.write(manifest_path(sout));
    out << "wrote " << sout << " (" << ds.length() << " rows, " << ds.channels() << " channels)\n";
    return kExitOk;
  }

  if (train_cmd->parsed()) {
    man.command = "train";
    TrainConfig cfg = tflags.resolve();
    if (threads > 0) cfg.threads = threads;
    CsvOptions csv{label_column, unlabeled};
    SplitDataset split = load_csv(tdata, fraction, csv);
    for (auto& w : split.warnings) err << "warning: " << w << '\n';
    man.input("data", tdata);
    man.lap("load");
    const std::string curve_path = tcurve.empty() ? tout + ".loss.csv" : tcurve;
    std::ofstream curve(curve_path);
    if (!curve) throw IoError("cannot write loss curve '" + curve_path + "'");
    curve << "epoch,loss,alignment,log_likelihood\n";
    TrainResult res = train(split.train, cfg, [&](const EpochStats& s) {
      curve << s.epoch << ',' << detail::format_double(s.loss) << ',' << detail::format_double(s.alignment) << ','
            << detail::format_double(s.log_likelihood) << '\n';
      out << "epoch " << s.epoch << "/" << cfg.epochs << "  loss " << s.loss << '\n';
    });
    man.lap("train");
    save_checkpoint(res.model, tout);
    man.seed = cfg.seed;
    man.config = config_json(cfg);
    man.config["train_fraction"] = fraction;
    man.artifacts["checkpoint"] = tout;
    man.artifacts["loss_curve"] = curve_path;
    man.lap("total");
    man.write(manifest_path(tout));
    out << "wrote " << tout << " (threshold " << res.model.fence.threshold << ")\n";
    return kExitOk;
  }

  if (score_cmd->parsed() || eval_cmd->parsed()) {
    const bool is_eval = eval_cmd->parsed();
    ScoreFlags& f = is_eval ? ef : sf;
    man.command = is_eval ? "eval" : "score";
    Model m = load_checkpoint(f.checkpoint);
    if (threads > 0) m.cfg.threads = threads;
    SeriesDataset ds = load_part(f.data, m, f.part, f.fraction, CsvOptions{f.label_column, f.unlabeled});
    if (is_eval && !ds.labeled)
      throw UndefinedMetricError("'" + f.data + "' has no '" + f.label_column +
                                 "' column; AUC needs labels (use `score` for unlabeled data)");
    man.input("data", f.data);
    man.input("checkpoint", f.checkpoint);
    ScoreReport r = score(m, ds, !f.graphs.empty());
    if (is_eval && std::isnan(r.auc))
      throw UndefinedMetricError("labels in '" + f.data + "' contain a single class; AUC is undefined");
    write_score_csv(r, f.out);
    const std::string summary = f.summary.empty() ? replace_extension(f.out, ".json") : f.summary;
    write_summary(r, summary, ds.labeled);
    if (!f.graphs.empty()) {
      adjacency_export(r.adjacency, f.graphs);
      man.artifacts["graphs"] = f.graphs;
    }
    man.seed = m.cfg.seed;
    man.config = config_json(m.cfg);
    man.config["part"] = f.part;
    man.artifacts["report"] = f.out;
    man.artifacts["summary"] = summary;
    man.lap("total");
    man.write(manifest_path(f.out));
    out << r.windows.size() << " windows, threshold " << r.threshold << ", predicted " << r.tp + r.fp;
    if (!std::isnan(r.auc)) out << ", auc " << r.auc;
    out << '\n';
    return kExitOk;
  }

  if (oracle_cmd->parsed()) {
    man.command = "oracle";
    bool ok = true;
    json suites = json::array();
    for (const auto& s : run_oracle_suites(oopts)) {
      char line[160];
      std::snprintf(line, sizeof line, "%-20s %s  %zu/%zu  max deviation %.3g", s.name.c_str(),
                    s.passed() ? "PASS" : "FAIL", s.instances - s.failures, s.instances, s.max_deviation);
      out << line << '\n';
      ok = ok && s.passed();
      suites.push_back({{"name", s.name}, {"passed", s.passed()}, {"instances", s.instances},
                        {"failures", s.failures}, {"max_deviation", s.max_deviation}});
    }
    man.config = {{"seeds", oopts.seeds}, {"inject_fault", oopts.inject_fault}};
    man.artifacts["suites"] = suites;
    man.lap("total");
    man.write(manifest_out.empty() ? "gadet-oracle.manifest.json" : manifest_out);
    return ok ? kExitOk : kExitSuite;
  }

  err << app.help();
  return kExitUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_checked(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace gadet::cli
