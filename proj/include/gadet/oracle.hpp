#pragma once

// Self-verification suites behind the `oracle` command. Each suite compares a
// solver against brute-force enumeration or finite differences on seeded
// random instances.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gadet/dynamic_graph.hpp"
#include "gadet/encoder.hpp"
#include "gadet/flow.hpp"
#include "gadet/gradcheck.hpp"
#include "gadet/ot.hpp"
#include "gadet/random.hpp"

namespace gadet {

struct SuiteReport {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed() const { return instances > 0 && failures == 0; }
};

struct OracleOptions {
  std::size_t seeds = 100;
  bool inject_fault = false;  // corrupts the exact reference of the Sinkhorn suite
};

namespace oracle {

inline Mat random_mat(std::size_t r, std::size_t c, Rng& rng) {
  Mat m(r, c);
  for (auto& x : m.v) x = rng.uniform();
  return m;
}

// A[pi(i), pi(j)] = B[i, j]
inline Mat conjugate(const Mat& a, const std::vector<std::size_t>& pi) {
  Mat b(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) b(pi[i], pi[j]) = a(i, j);
  return b;
}

// Exact optimum of uniform-marginal n x n transport: the Birkhoff polytope's
// vertices are permutation matrices scaled by 1/n.
inline double exact_assignment_cost(const Mat& cost) {
  std::vector<std::size_t> sigma(cost.rows);
  std::iota(sigma.begin(), sigma.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < cost.rows; ++i) c += cost(i, sigma[i]);
    best = std::min(best, c / static_cast<double>(cost.rows));
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return best;
}

inline Mat path_graph(std::size_t n) {
  Mat a(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) a(i, i + 1) = a(i + 1, i) = 1.0;
  return a;
}

inline Mat star_graph(std::size_t n) {
  Mat a(n, n);
  for (std::size_t i = 1; i < n; ++i) a(0, i) = a(i, 0) = 1.0;
  return a;
}

}  // namespace oracle

inline SuiteReport suite_alignment_identity(std::size_t instances) {
  SuiteReport r{"alignment-identity", instances, 0, 0.0, 0.0};
  for (std::size_t s = 0; s < instances; ++s) {
    Rng rng(1000 + s);
    const std::size_t n = 3 + s % 2, d = 3;
    auto as = oracle::random_mat(n, n, rng), xs = oracle::random_mat(n, d, rng);
    auto at = oracle::random_mat(n, n, rng), xt = oracle::random_mat(n, d, rng);
    if (!theorem1_check(as, xs, at, xt)) ++r.failures;
  }
  return r;
}

inline SuiteReport suite_sinkhorn_exact(std::size_t instances, bool inject_fault) {
  SuiteReport r{"sinkhorn-vs-exact", instances, 0, 0.0, 0.02};
  const SinkhornOptions opts{0.005, 200000, 1e-7};
  for (std::size_t s = 0; s < instances; ++s) {
    Rng rng(2000 + s);
    const Mat cost = cost_matrix(oracle::random_mat(4, 2, rng), oracle::random_mat(4, 2, rng));
    double exact = oracle::exact_assignment_cost(cost);
    if (inject_fault) exact *= 1.05;
    const auto plan = sinkhorn_wd(cost, uniform_marginal(4), uniform_marginal(4), opts);
    const double rel = std::abs(plan.objective - exact) / std::max(exact, 1e-12);
    r.max_deviation = std::max(r.max_deviation, rel);
    if (rel > r.tolerance || plan.violation >= 1e-6) ++r.failures;
  }
  return r;
}

// Isomorphic pairs must reach (near) zero GWD; path vs star on 4 nodes must
// stay separated.
inline SuiteReport suite_gwd_isomorphism(std::size_t instances) {
  SuiteReport r{"gwd-isomorphism", instances + 1, 0, 0.0, 1e-3};
  const GwOptions opts{SinkhornOptions{0.01, 1000, 1e-9}, 50, 1e-9};
  for (std::size_t s = 0; s < instances; ++s) {
    Rng rng(3000 + s);
    const std::size_t n = 3 + s % 3;
    const Mat a = oracle::random_mat(n, n, rng);
    std::vector<std::size_t> pi(n);
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    rng.shuffle(pi.begin(), pi.end());
    const auto plan = entropic_gwd(a, oracle::conjugate(a, pi), uniform_marginal(n), uniform_marginal(n), opts);
    r.max_deviation = std::max(r.max_deviation, plan.objective);
    if (!(plan.objective < r.tolerance)) ++r.failures;
  }
  const auto ps = entropic_gwd(oracle::path_graph(4), oracle::star_graph(4), uniform_marginal(4), uniform_marginal(4), opts);
  if (!(ps.objective > 0.05)) ++r.failures;
  return r;
}

// Tape gradients of the model components against central differences, and
// the frozen-plan WD gradient against differences of the re-solved entropic
// objective (the value whose derivative the frozen plan gives exactly).
inline SuiteReport suite_gradients(std::size_t instances) {
  SuiteReport r{"gradients", 0, 0, 0.0, 1e-4};
  auto record = [&](double err, double tol) {
    ++r.instances;
    r.max_deviation = std::max(r.max_deviation, err);
    if (err > tol) ++r.failures;
  };
  for (std::size_t s = 0; s < instances; ++s) {
    Rng rng(4000 + s);
    const std::size_t t = 4, n = 3;
    Tensor windows = normal_tensor({2, t, n}, 1.0, rng);
    AttentionParams attn = AttentionParams::init(t, rng);
    EncoderParams enc = EncoderParams::init(3, 2, rng);
    FlowModel flow = FlowModel::random(t, t * 2, 2, 0.3, rng);

    auto graph_loss = [&] {
      auto g = build_graphs(windows, attn);
      return sum(square(g.adjacency));
    };
    record(grad_check(graph_loss, {attn.wq, attn.wk}).max_rel_error, 1e-4);

    auto full_loss = [&] {
      auto g = build_graphs(windows, attn);
      Tensor emb = encode(g, enc);
      return scale(batch_log_likelihood(g.features, emb, flow), -1.0);
    };
    record(grad_check(full_loss, enc.tensors()).max_rel_error, 1e-4);
    record(grad_check(full_loss, flow.tensors()).max_rel_error, 1e-4);

    Mat xs = oracle::random_mat(3, 2, rng), xt = oracle::random_mat(3, 2, rng);
    Tensor leaf = Tensor::from({3, 2}, xs.v, true);
    const SinkhornOptions sk{0.01, 2000, 1e-10};
    auto plan = sinkhorn_wd(cost_matrix(xs, xt), uniform_marginal(3), uniform_marginal(3), sk).plan;
    leaf.zero_grad();
    backward(sum(pairwise_distance(leaf, xt.tensor()) * plan.tensor()));
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    double worst = 0.0;
    const double eps = 1e-6;
    for (std::size_t k = 0; k < xs.v.size(); ++k) {
      Mat up = xs, down = xs;
      up.v[k] += eps;
      down.v[k] -= eps;
      const double fu = sinkhorn_wd(cost_matrix(up, xt), uniform_marginal(3), uniform_marginal(3), sk).regularized;
      const double fd = sinkhorn_wd(cost_matrix(down, xt), uniform_marginal(3), uniform_marginal(3), sk).regularized;
      worst = std::max(worst, relative_error(analytic[k], (fu - fd) / (2 * eps)));
    }
    record(worst, 1e-2);
  }
  return r;
}

inline std::vector<SuiteReport> run_oracle_suites(const OracleOptions& opts) {
  const std::size_t s = std::max<std::size_t>(opts.seeds, 5);
  return {suite_alignment_identity(s), suite_sinkhorn_exact(s / 2, opts.inject_fault),
          suite_gwd_isomorphism(s / 5), suite_gradients(s / 20)};
}

}  // namespace gadet
