#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gadet/data_io.hpp"
#include "gadet/metrics.hpp"
#include "gadet/train_score.hpp"

using namespace gadet;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.window = 12;
  c.stride = 6;
  c.batch = 4;
  c.epochs = 2;
  c.hidden = 6;
  c.d_step = 2;
  c.seed = 3;
  return c;
}

SplitDataset synth_split(std::size_t length, std::uint64_t seed, std::vector<AnomalyInterval> anomalies = {}) {
  SynthSpec spec;
  spec.channels = 3;
  spec.length = length;
  spec.anomalies = std::move(anomalies);
  return split_and_normalize(synth_generate(spec, seed), 0.6);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Quartiles, LinearInterpolationExample) {
  std::vector<double> s{1, 2, 3, 4, 5, 6, 7, 8};
  auto f = iqr_threshold(s);
  EXPECT_DOUBLE_EQ(f.q1, 2.75);
  EXPECT_DOUBLE_EQ(f.q3, 6.25);
  EXPECT_DOUBLE_EQ(f.threshold, 11.5);
}

TEST(Quartiles, TranslationShiftsThreshold) {
  Rng rng(1);
  std::vector<double> s(37);
  for (auto& x : s) x = rng.normal(0.0, 3.0);
  auto base = iqr_threshold(s);
  for (auto& x : s) x += 4.25;
  EXPECT_NEAR(iqr_threshold(s).threshold, base.threshold + 4.25, 1e-12);
}

TEST(Quartiles, EmptyIsContractError) {
  EXPECT_THROW(iqr_threshold(std::vector<double>{}), ContractError);
}

TEST(Auc, WorkedExample) {
  EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
}

TEST(Auc, SeparatedAndTied) {
  EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{5, 5, 5, 5, 5}, std::vector<int>{1, 0, 0, 1, 0}), 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), UndefinedMetricError);
}

TEST(Auc, MonotoneTransformInvariant) {
  Rng rng(2);
  std::vector<double> s(40), t(40);
  std::vector<int> l(40);
  for (std::size_t k = 0; k < 40; ++k) {
    l[k] = rng.uniform() < 0.3;
    s[k] = rng.normal() + l[k];
    t[k] = std::exp(3.0 * s[k]) - 7.0;
  }
  EXPECT_DOUBLE_EQ(auc_roc(s, l), auc_roc(t, l));
}

TEST(Config, ValidationAndFileParsing) {
  auto c = small_config();
  c.batch = 1;
  EXPECT_THROW(validate(c), ConfigError);
  TrainConfig d;
  EXPECT_THROW(set_config_value(d, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(set_config_value(d, "window", "abc"), ConfigError);
  set_config_value(d, "ablation", "no_gwd");
  EXPECT_EQ(d.ablation, Ablation::no_gwd);
  auto p = fs::temp_directory_path() / "gadet_cfg_test.conf";
  std::ofstream(p) << "# comment\nwindow = 20\nlambda = 0.5\n\nomega_mode = concat\n";
  apply_config_file(d, p.string());
  EXPECT_EQ(d.window, 20u);
  EXPECT_DOUBLE_EQ(d.lambda, 0.5);
  EXPECT_EQ(d.omega_mode, OmegaMode::concat);
}

TEST(Loss, NoAlignmentAblationIsNegativeLikelihood) {
  auto split = synth_split(300, 4);
  auto cfg = small_config();
  cfg.ablation = Ablation::no_ga;
  Rng rng(5);
  auto m = Model::init(cfg, 3, rng);
  auto wb = make_windows(split.train, cfg.window, cfg.stride, cfg.batch)[0];
  auto f = forward_batch(m, wb, false, nullptr);
  EXPECT_EQ(f.loss.item(), -f.log_likelihood.item());
  EXPECT_EQ(f.alignment.item(), 0.0);
}

TEST(Loss, DecomposesIntoAlignmentAndLikelihood) {
  auto split = synth_split(300, 6);
  auto cfg = small_config();
  Rng rng(7);
  auto m = Model::init(cfg, 3, rng);
  auto wb = make_windows(split.train, cfg.window, cfg.stride, cfg.batch)[0];

  auto full = forward_batch(m, wb, false, nullptr);
  // independent recomputation of both terms
  GraphBatch g = build_graphs(wb.windows, m.attention);
  Tensor emb = encode(g, m.encoder, cfg.embedding_reduce);
  const double lf = batch_log_likelihood(g.features, emb, m.flow).item();
  auto acfg = cfg.align();
  auto plans = batch_alignment(emb, g.adjacency, acfg);
  double wd = 0.0, gw = 0.0;
  for (const auto& p : plans) {
    wd += p.wd / static_cast<double>(plans.size());
    gw += p.gwd / static_cast<double>(plans.size());
  }
  EXPECT_NEAR(full.log_likelihood.item(), lf, 1e-12);
  EXPECT_NEAR(full.loss.item(), cfg.lambda * (wd + gw) - lf, 1e-10);

  auto no_wd_cfg = cfg;
  no_wd_cfg.ablation = Ablation::no_wd;
  Model m2 = m;
  m2.cfg = no_wd_cfg;
  EXPECT_NEAR(forward_batch(m2, wb, false, nullptr).loss.item(), cfg.lambda * gw - lf, 1e-10);
  m2.cfg.ablation = Ablation::no_gwd;
  EXPECT_NEAR(forward_batch(m2, wb, false, nullptr).loss.item(), cfg.lambda * wd - lf, 1e-10);
}

TEST(Train, LossDecreasesOnNormalSyntheticData) {
  SynthSpec spec;
  spec.channels = 5;
  spec.length = 2000;
  auto split = split_and_normalize(synth_generate(spec, 7), 0.6);
  TrainConfig cfg;
  cfg.window = 40;
  cfg.batch = 16;
  cfg.epochs = 10;
  cfg.seed = 7;
  auto res = train(split.train, cfg);
  ASSERT_EQ(res.curve.size(), 10u);
  EXPECT_LT(res.curve.back().loss, res.curve.front().loss);
}

TEST(Train, SameSeedSameCurveAndScores) {
  auto split = synth_split(400, 8, {{AnomalyKind::spike, 300, 320}});
  auto cfg = small_config();
  auto a = train(split.train, cfg), b = train(split.train, cfg);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t k = 0; k < a.curve.size(); ++k) EXPECT_EQ(a.curve[k].loss, b.curve[k].loss);
  auto ra = score(a.model, split.test), rb = score(b.model, split.test);
  ASSERT_EQ(ra.windows.size(), rb.windows.size());
  for (std::size_t k = 0; k < ra.windows.size(); ++k) EXPECT_EQ(ra.windows[k].score, rb.windows[k].score);
}

TEST(Train, RejectsTooShortSplit) {
  auto split = synth_split(40, 9);
  auto cfg = small_config();
  cfg.window = 30;
  EXPECT_THROW(train(split.train, cfg), ConfigError);
}

TEST(Score, ScoreIsRawDistancePlusNll) {
  auto split = synth_split(400, 10, {{AnomalyKind::interdependency_shift, 300, 340}});
  auto cfg = small_config();
  auto res = train(split.train, cfg);
  auto r = score(res.model, split.test);
  ASSERT_FALSE(r.windows.empty());
  for (const auto& w : r.windows) {
    EXPECT_DOUBLE_EQ(w.score, w.d_ga + w.nll);
    EXPECT_EQ(w.predicted, w.score > r.threshold ? 1 : 0);
    EXPECT_GE(w.start, split.test.offset);
  }
  std::size_t pos = 0;
  for (const auto& w : r.windows) pos += w.label;
  EXPECT_EQ(r.tp + r.fn, pos);
  EXPECT_EQ(r.tp + r.fp + r.tn + r.fn, r.windows.size());
  EXPECT_TRUE(r.auc >= 0.0 && r.auc <= 1.0);

  Model scaled = res.model;
  scaled.cfg.score_lambda_scaled = true;
  auto rs = score(scaled, split.test);
  for (std::size_t k = 0; k < r.windows.size(); ++k) {
    EXPECT_NEAR(rs.windows[k].d_ga, cfg.lambda * r.windows[k].d_ga, 1e-12);
    // larger distance term with the same likelihood gives a larger score
    if (r.windows[k].d_ga > 0.0) EXPECT_LT(rs.windows[k].score, r.windows[k].score);
  }
}

TEST(Score, IdenticalWindowsGiveConstantScoresAndNoPredictions) {
  // period equal to the stride: every window has the same contents
  SeriesDataset ds;
  ds.channel_names = {"a", "b", "c"};
  for (std::size_t t = 0; t < 240; ++t) {
    const double ph = 2.0 * std::numbers::pi * static_cast<double>(t % 6) / 6.0;
    ds.values.insert(ds.values.end(), {std::sin(ph), std::cos(ph), std::sin(2 * ph)});
    ds.labels.push_back(0);
  }
  auto split = split_and_normalize(ds, 0.6);
  auto res = train(split.train, small_config());
  auto r = score(res.model, split.test);
  double lo = 1e300, hi = -1e300;
  for (const auto& w : r.windows) {
    lo = std::min(lo, w.score);
    hi = std::max(hi, w.score);
  }
  EXPECT_LT(hi - lo, 1e-9);
  EXPECT_EQ(r.tp + r.fp, 0u);
  EXPECT_TRUE(std::isnan(r.auc));
}

TEST(Score, ChannelMismatchIsContractError) {
  auto split = synth_split(300, 11);
  auto cfg = small_config();
  Rng rng(1);
  auto m = Model::init(cfg, 4, rng);
  EXPECT_THROW(score(m, split.test), ContractError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto split = synth_split(400, 12, {{AnomalyKind::spike, 310, 330}});
  auto res = train(split.train, small_config());
  auto dir = fs::temp_directory_path() / "gadet_ckpt_test";
  fs::create_directories(dir);
  save_checkpoint(res.model, (dir / "a.ckpt").string());
  auto loaded = load_checkpoint((dir / "a.ckpt").string());
  save_checkpoint(loaded, (dir / "b.ckpt").string());
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));

  auto ra = score(res.model, split.test), rb = score(loaded, split.test);
  ASSERT_EQ(ra.windows.size(), rb.windows.size());
  for (std::size_t k = 0; k < ra.windows.size(); ++k) EXPECT_NEAR(ra.windows[k].score, rb.windows[k].score, 1e-12);
  EXPECT_EQ(ra.threshold, rb.threshold);
}

TEST(Checkpoint, TamperedVersionAndCorruptionAreRefused) {
  auto split = synth_split(300, 13);
  auto cfg = small_config();
  cfg.epochs = 1;
  auto text = serialize_checkpoint(train(split.train, cfg).model);
  auto bumped = text;
  bumped.replace(bumped.find("gadet-checkpoint 1"), 18, "gadet-checkpoint 2");
  EXPECT_THROW(parse_checkpoint(bumped), ParseError);
  EXPECT_THROW(parse_checkpoint(text.substr(0, text.size() / 2)), ParseError);
  EXPECT_THROW(parse_checkpoint("hello\n"), ParseError);
  EXPECT_THROW(load_checkpoint((fs::temp_directory_path() / "gadet_missing.ckpt").string()), IoError);
}

TEST(ScoreCsv, HeaderAndRows) {
  ScoreReport r;
  r.windows.push_back({0, 1, 0.5, 2.0, 2.5, 1});
  std::ostringstream os;
  write_score_csv(r, os);
  std::string first;
  std::istringstream in(os.str());
  std::getline(in, first);
  EXPECT_EQ(first, "window_start,label,d_ga,nll,score,predicted");
  std::string row;
  std::getline(in, row);
  EXPECT_EQ(row.substr(0, 4), "0,1,");
}
