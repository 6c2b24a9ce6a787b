// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Reference values come from enumeration and finite differences written here,
// not from the library's own oracle suites.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gadet/data_io.hpp"
#include "gadet/dynamic_graph.hpp"
#include "gadet/encoder.hpp"
#include "gadet/flow.hpp"
#include "gadet/metrics.hpp"
#include "gadet/ot.hpp"
#include "gadet/train_score.hpp"

using namespace gadet;

namespace {

using Clock = std::chrono::steady_clock;
using Perm = std::vector<std::size_t>;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  return ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<Perm> permutations(std::size_t n) {
  Perm p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::vector<Perm> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

Mat uniform_mat(std::size_t r, std::size_t c, Rng& rng) {
  Mat m(r, c);
  for (auto& x : m.v) x = rng.uniform();
  return m;
}

Mat product(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k)
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

// ---------------------------------------------------------------------------

bool criterion1() {
  const auto t0 = Clock::now();
  int agree = 0;
  const int total = 100;
  for (int s = 0; s < total; ++s) {
    Rng rng(10'000 + s);
    const std::size_t n = s < 50 ? 3 : 4, d = 3;
    Mat as = uniform_mat(n, n, rng), xs = uniform_mat(n, d, rng), at = uniform_mat(n, n, rng), xt = uniform_mat(n, d, rng);
    Mat ms = product(as, xs), mt = product(at, xt);
    // P[i, p[i]] = 1, so (P M_s) row i is M_s row p[i]
    std::vector<double> fro, inner;
    const auto perms = permutations(n);
    for (const auto& p : perms) {
      double f = 0.0, g = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
          f += (ms(p[i], k) - mt(i, k)) * (ms(p[i], k) - mt(i, k));
          g += ms(p[i], k) * mt(i, k);
        }
      fro.push_back(f);
      inner.push_back(g);
    }
    const double fmin = *std::min_element(fro.begin(), fro.end());
    const double gmax = *std::max_element(inner.begin(), inner.end());
    bool same = true;
    for (std::size_t k = 0; k < perms.size(); ++k)
      same = same && ((fro[k] <= fmin + 1e-9 * (1 + fmin)) == (inner[k] >= gmax - 1e-9 * (1 + gmax)));
    const bool lib = theorem1_check(as, xs, at, xt);
    agree += same && lib;
  }
  const double secs = seconds_since(t0);
  return report(1, agree == total && secs < 10.0, fmt("%d/%d instances agree, %.2f s (limit 10 s)", agree, total, secs));
}

bool criterion2() {
  const auto t0 = Clock::now();
  int ok = 0;
  double worst_rel = 0.0, worst_viol = 0.0;
  const int total = 50;
  for (int s = 0; s < total; ++s) {
    Rng rng(20'000 + s);
    const Mat cost = cost_matrix(uniform_mat(4, 2, rng), uniform_mat(4, 2, rng));
    double exact = 1e300;
    for (const auto& p : permutations(4)) {
      double c = 0.0;
      for (std::size_t i = 0; i < 4; ++i) c += cost(i, p[i]) / 4.0;
      exact = std::min(exact, c);
    }
    const auto plan = sinkhorn_wd(cost, uniform_marginal(4), uniform_marginal(4), {0.005, 200'000, 1e-7});
    double viol = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      double r = 0.0, c = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        r += plan.plan(i, j);
        c += plan.plan(j, i);
      }
      viol += std::abs(r - 0.25) + std::abs(c - 0.25);
    }
    const double rel = std::abs(plan.objective - exact) / exact;
    worst_rel = std::max(worst_rel, rel);
    worst_viol = std::max(worst_viol, viol);
    ok += rel <= 0.02 && viol < 1e-6;
  }
  const double secs = seconds_since(t0);
  return report(2, ok == total && secs < 30.0,
                fmt("%d/%d within 2%%, max rel gap %.4f, max violation %.2e, %.2f s (limit 30 s)", ok, total,
                    worst_rel, worst_viol, secs));
}

double gw_value(const Mat& as, const Mat& at, const Mat& p) {
  double v = 0.0;
  for (std::size_t i = 0; i < as.rows; ++i)
    for (std::size_t j = 0; j < at.rows; ++j)
      for (std::size_t a = 0; a < as.rows; ++a)
        for (std::size_t b = 0; b < at.rows; ++b) v += p(i, j) * p(a, b) * std::abs(as(i, a) - at(j, b));
  return v;
}

bool criterion3() {
  const GwOptions opts{{0.01, 1000, 1e-9}, 50, 1e-9};
  int ok = 0;
  double worst = 0.0;
  const int total = 20;
  for (int s = 0; s < total; ++s) {
    Rng rng(30'000 + s);
    const std::size_t n = 3 + s % 3;
    Mat a = uniform_mat(n, n, rng);
    Perm pi(n);
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    rng.shuffle(pi.begin(), pi.end());
    Mat b(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) b(pi[i], pi[j]) = a(i, j);
    const double obj = entropic_gwd(a, b, uniform_marginal(n), uniform_marginal(n), opts).objective;
    worst = std::max(worst, obj);
    ok += obj < 1e-3;
  }
  Mat path(4, 4), star(4, 4);
  for (std::size_t i = 0; i + 1 < 4; ++i) path(i, i + 1) = path(i + 1, i) = 1.0;
  for (std::size_t i = 1; i < 4; ++i) star(0, i) = star(i, 0) = 1.0;
  double best_perm = 1e300;
  for (const auto& p : permutations(4)) {
    Mat pl(4, 4);
    for (std::size_t i = 0; i < 4; ++i) pl(i, p[i]) = 0.25;
    best_perm = std::min(best_perm, gw_value(path, star, pl));
  }
  const double ps = entropic_gwd(path, star, uniform_marginal(4), uniform_marginal(4), opts).objective;
  return report(3, ok == total && ps > 0.05,
                fmt("%d/%d isomorphic pairs below 1e-3 (max %.2e); path vs star %.4f (best permutation %.4f, need > 0.05)",
                    ok, total, worst, ps, best_perm));
}

// Largest relative error between tape gradients and central differences.
double fd_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
  for (auto& l : leaves) l.zero_grad();
  backward(f());
  double worst = 0.0;
  const double eps = 1e-5;
  for (auto& l : leaves) {
    std::vector<double> analytic(l.grad().begin(), l.grad().end());
    auto vals = l.mutable_values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double keep = vals[k];
      vals[k] = keep + eps;
      const double up = f().item();
      vals[k] = keep - eps;
      const double dn = f().item();
      vals[k] = keep;
      const double num = (up - dn) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[k] - num) / std::max({std::abs(analytic[k]), std::abs(num), 1e-2}));
    }
  }
  return worst;
}

bool criterion4() {
  const auto t0 = Clock::now();
  double w_attn = 0.0, w_enc = 0.0, w_flow = 0.0, w_env = 0.0;
  for (int s = 0; s < 5; ++s) {
    Rng rng(40'000 + s);
    const std::size_t t = 5, n = 3;
    Tensor windows = normal_tensor({2, t, n}, 1.0, rng);
    AttentionParams attn = AttentionParams::init(t, rng);
    EncoderParams enc = EncoderParams::init(3, 2, rng);
    enc.bias = uniform_tensor({12}, -0.5, 0.5, rng, true);
    FlowModel flow = FlowModel::random(t, t * 2, 2, 0.3, rng);
    Tensor mix = normal_tensor({2, n, n}, 1.0, rng);

    w_attn = std::max(w_attn, fd_check([&] { return sum(build_graphs(windows, attn).adjacency * mix); }, {attn.wq, attn.wk}));
    auto nll = [&] {
      auto g = build_graphs(windows, attn);
      Tensor e = encode(g, enc);
      return scale(batch_log_likelihood(g.features, e, flow), -1.0);
    };
    w_enc = std::max(w_enc, fd_check(nll, enc.tensors()));
    w_flow = std::max(w_flow, fd_check(nll, flow.tensors()));

    // envelope gradient of D_GA in the source embeddings: frozen plan vs
    // differences of the re-solved entropic problem
    const double lambda = 0.1, beta = 0.01;
    Mat xs = uniform_mat(4, 3, rng), xt = uniform_mat(4, 3, rng);
    const SinkhornOptions sk{beta, 5000, 1e-11};
    const Mat plan = sinkhorn_wd(cost_matrix(xs, xt), uniform_marginal(4), uniform_marginal(4), sk).plan;
    Tensor leaf = Tensor::from({4, 3}, xs.v, true);
    backward(scale(sum(pairwise_distance(leaf, xt.tensor()) * plan.tensor()), lambda));
    const double eps = 1e-6;
    for (std::size_t k = 0; k < xs.v.size(); ++k) {
      Mat up = xs, dn = xs;
      up.v[k] += eps;
      dn.v[k] -= eps;
      const double fu = lambda * sinkhorn_wd(cost_matrix(up, xt), uniform_marginal(4), uniform_marginal(4), sk).regularized;
      const double fd = lambda * sinkhorn_wd(cost_matrix(dn, xt), uniform_marginal(4), uniform_marginal(4), sk).regularized;
      const double num = (fu - fd) / (2 * eps), an = leaf.grad()[k];
      w_env = std::max(w_env, std::abs(an - num) / std::max({std::abs(an), std::abs(num), 1e-2}));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = w_attn <= 1e-4 && w_enc <= 1e-4 && w_flow <= 1e-4 && w_env <= 1e-2 && secs < 60.0;
  return report(4, ok,
                fmt("max rel err attention %.1e, encoder %.1e, flow %.1e (limit 1e-4); envelope %.1e (limit 1e-2); %.1f s",
                    w_attn, w_enc, w_flow, w_env, secs));
}

bool criterion5() {
  Rng rng(50'000);
  // identity flow against the closed-form standard normal density
  double id_err = 0.0;
  auto ident = FlowModel::identity(6, 4, 2);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> x(6), c(4);
    for (auto& v : x) v = rng.normal(0.0, 2.0);
    for (auto& v : c) v = rng.normal();
    double sq = 0.0;
    for (double v : x) sq += v * v;
    const double closed = -0.5 * sq - 3.0 * std::log(2.0 * std::numbers::pi);
    id_err = std::max(id_err, std::abs(ident.log_prob(x, c) - closed));
  }
  // T = 1 normalization by Riemann sum
  auto f1 = FlowModel::random(1, 3, 2, 0.5, rng);
  const std::vector<double> cond{0.3, -0.7, 1.1};
  double mass = 0.0;
  const double h = 1e-3;
  for (double x = -50.0; x <= 50.0; x += h) mass += std::exp(f1.log_prob(std::vector<double>{x}, cond)) * h;
  // inverse round trip on the configured depth
  double inv_err = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t dim = 1 + rng.index(6);
    auto f = FlowModel::random(dim, 3, 2, 0.3, rng);
    std::vector<double> x(dim), c(3);
    for (auto& v : x) v = rng.normal();
    for (auto& v : c) v = rng.normal();
    auto z = f.forward(Tensor::from({1, dim}, x), Tensor::from({1, 3}, c)).first;
    auto back = f.inverse(z.values(), c);
    for (std::size_t q = 0; q < dim; ++q) inv_err = std::max(inv_err, std::abs(back[q] - x[q]));
  }
  const bool ok = id_err <= 1e-10 && std::abs(mass - 1.0) <= 1e-3 && inv_err <= 1e-8;
  return report(5, ok, fmt("identity density err %.1e (limit 1e-10); T=1 mass %.6f (1 +- 1e-3); inverse err %.1e (limit 1e-8)",
                           id_err, mass, inv_err));
}

// ---------------------------------------------------------------------------
// Synthetic detection runs shared by criteria 6, 7 and 9.

struct RunOutput {
  double auc = 0.0;
  ScoreReport report;
  std::size_t test_offset = 0;
};

SplitDataset detection_data(std::uint64_t seed) {
  SynthSpec spec;
  spec.channels = 5;
  spec.length = 2000;
  spec.anomalies = {{AnomalyKind::interdependency_shift, 1400, 1520}, {AnomalyKind::spike, 1700, 1760}};
  return split_and_normalize(synth_generate(spec, seed), 0.6);
}

TrainConfig detection_config(std::uint64_t seed, Ablation ab) {
  TrainConfig c;
  c.window = 40;
  c.stride = 10;
  c.batch = 16;
  c.epochs = 10;
  c.seed = seed;
  c.ablation = ab;
  return c;
}

RunOutput detection_run(std::uint64_t seed, Ablation ab, bool adjacency) {
  auto split = detection_data(seed);
  auto res = train(split.train, detection_config(seed, ab));
  RunOutput out;
  out.report = score(res.model, split.test, adjacency);
  out.test_offset = split.test.offset;
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& w : out.report.windows) {
    s.push_back(w.score);
    l.push_back(w.label);
  }
  out.auc = auc_roc(s, l);
  return out;
}

std::string score_csv(const ScoreReport& r) {
  std::ostringstream os;
  write_score_csv(r, os);
  return os.str();
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Mean element-wise |mean(A over group a) - mean(A over group b)|.
double adjacency_gap(const std::vector<const AdjacencyRecord*>& a, const std::vector<const AdjacencyRecord*>& b) {
  const std::size_t cells = a.front()->values.size();
  std::vector<double> ma(cells, 0.0), mb(cells, 0.0);
  for (auto* r : a)
    for (std::size_t k = 0; k < cells; ++k) ma[k] += r->values[k] / static_cast<double>(a.size());
  for (auto* r : b)
    for (std::size_t k = 0; k < cells; ++k) mb[k] += r->values[k] / static_cast<double>(b.size());
  double g = 0.0;
  for (std::size_t k = 0; k < cells; ++k) g += std::abs(ma[k] - mb[k]) / static_cast<double>(cells);
  return g;
}

}  // namespace

int main() {
  bool all = true;
  all &= criterion1();
  all &= criterion2();
  all &= criterion3();
  all &= criterion4();
  all &= criterion5();

  // criteria 6 and 7
  const auto t0 = Clock::now();
  const Ablation ablations[] = {Ablation::full, Ablation::no_wd, Ablation::no_gwd, Ablation::no_ga};
  std::vector<double> aucs[4];
  std::vector<double> shift_gap, normal_gap;
  std::string first_csv;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (int a = 0; a < 4; ++a) {
      const bool full = ablations[a] == Ablation::full;
      RunOutput r = detection_run(seed, ablations[a], full);
      aucs[a].push_back(r.auc);
      std::printf("  seed %llu %-6s auc %.4f\n", static_cast<unsigned long long>(seed), to_string(ablations[a]), r.auc);
      if (!full) continue;
      if (seed == 0) first_csv = score_csv(r.report);
      // shift windows: any overlap with [1400, 1520); normal: unlabeled
      std::vector<const AdjacencyRecord*> shift, normal;
      for (const auto& g : r.report.adjacency) {
        const std::size_t s = g.window_start;
        if (s < 1520 && s + 40 > 1400) shift.push_back(&g);
        else if (!(s < 1760 && s + 40 > 1700)) normal.push_back(&g);
      }
      const std::size_t half = normal.size() / 2;
      std::vector<const AdjacencyRecord*> early(normal.begin(), normal.begin() + half), late(normal.begin() + half, normal.end());
      shift_gap.push_back(adjacency_gap(shift, normal));
      normal_gap.push_back(adjacency_gap(early, late));
    }
  }
  const double secs = seconds_since(t0);
  const double full = mean_of(aucs[0]), no_wd = mean_of(aucs[1]), no_gwd = mean_of(aucs[2]), no_ga = mean_of(aucs[3]);
  all &= report(6, full >= 0.85 && full >= no_ga + 0.03 && secs < 600.0,
                fmt("mean AUC full %.4f (need >= 0.85), no_wd %.4f, no_gwd %.4f, no_ga %.4f (need full >= no_ga + 0.03); "
                    "%.0f s for 20 runs (limit 600 s)",
                    full, no_wd, no_gwd, no_ga, secs));
  const double sg = mean_of(shift_gap), ng = mean_of(normal_gap);
  all &= report(7, sg >= 1.5 * ng, fmt("shift-vs-normal gap %.4f, normal-vs-normal gap %.4f, ratio %.2f (need >= 1.5)", sg, ng, sg / ng));

  {
    std::vector<double> q{1, 2, 3, 4, 5, 6, 7, 8};
    const auto f = iqr_threshold(q);
    const double auc = auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
    all &= report(8, f.q1 == 2.75 && f.q3 == 6.25 && f.threshold == 11.5 && auc == 0.75,
                  fmt("Q1 %.4g, Q3 %.4g, threshold %.4g, AUC %.4g", f.q1, f.q3, f.threshold, auc));
  }

  {
    const std::string again = score_csv(detection_run(0, Ablation::full, false).report);
    all &= report(9, !first_csv.empty() && again == first_csv,
                  fmt("seed-0 score CSV rerun %s (%zu bytes)", again == first_csv ? "identical" : "differs", again.size()));
  }

  std::printf("acceptance: %s\n", all ? "all criteria passed" : "some criteria failed");
  return all ? 0 : 1;
}
