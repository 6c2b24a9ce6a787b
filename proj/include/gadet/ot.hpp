#pragma once

// Graph alignment by optimal transport.
//
// Nodes are aligned with an entropic Wasserstein plan over Euclidean
// embedding distances; edges are aligned with an entropic Gromov-Wasserstein
// plan over the quartet loss |A_s[i,i'] - A_t[j,j']|. The fused distance is
// D_GA = lambda * (WD + GWD) with two independent plans. Gradients treat the
// converged plans as constants.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gadet/error.hpp"
#include "gadet/tensor.hpp"

namespace gadet {

// Small dense row-major matrix for the value-level solvers.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != r * c) throw ContractError("matrix data does not match " + std::to_string(r) + "x" + std::to_string(c));
  }
  static Mat of(const Tensor& t) {
    if (t.rank() != 2) throw ContractError("expected a matrix, got " + shape_str(t.shape()));
    return Mat(t.dim(0), t.dim(1), std::vector<double>(t.values().begin(), t.values().end()));
  }
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  Mat transposed() const {
    Mat t(cols, rows);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }
  Tensor tensor() const { return Tensor::from({rows, cols}, v); }
};

inline std::vector<double> uniform_marginal(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

struct TransportPlan {
  Mat plan;
  std::vector<double> u, v;
  double objective = 0.0;    // unregularised cost at the plan
  double regularized = 0.0;  // objective + beta * sum P (log P - 1)
  int iterations = 0;
  bool converged = false;
  double violation = 0.0;                 // final L1 marginal violation
  std::vector<double> violation_history;  // one entry per iteration
};

struct SinkhornOptions {
  double beta = 0.05;
  int max_iter = 200;
  double tol = 1e-7;
};

struct GwOptions {
  SinkhornOptions sinkhorn;
  int outer_iter = 20;
  double tol = 1e-7;  // max-abs plan change between outer iterations
};

// c(x_i, y_j) = ||x_i - y_j||_2 between rows.
inline Mat cost_matrix(const Mat& xs, const Mat& xt) {
  if (xs.cols != xt.cols)
    throw ContractError("embedding dimensions differ: " + std::to_string(xs.cols) + " vs " + std::to_string(xt.cols));
  Mat c(xs.rows, xt.rows);
  for (std::size_t i = 0; i < xs.rows; ++i)
    for (std::size_t j = 0; j < xt.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < xs.cols; ++k) {
        const double d = xs(i, k) - xt(j, k);
        s += d * d;
      }
      c(i, j) = std::sqrt(s);
    }
  return c;
}

inline double frobenius_dot(const Mat& a, const Mat& b) {
  return std::inner_product(a.v.begin(), a.v.end(), b.v.begin(), 0.0);
}

namespace detail {

inline void check_marginal(const std::vector<double>& w, const char* name) {
  double s = 0.0;
  for (double x : w) {
    if (!(x > 0.0)) throw ContractError(std::string("marginal ") + name + " must be strictly positive");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ContractError(std::string("marginal ") + name + " must sum to 1, sums to " + std::to_string(s));
}

inline double log_sum_exp(const double* x, std::size_t n, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(x[k * stride] - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Log-domain Sinkhorn for min <P, C> + beta * sum P log P over P in Pi(u, v).
// Each iteration updates the row potential then the column potential, so the
// column marginals are exact and the reported violation is the row L1 error.
//
// When cost/beta spans a wide range the potentials are first warm-started
// through a geometric schedule of larger betas (each stage run to the same
// tolerance); the final stage at the requested beta is the one recorded in
// `iterations` and `violation_history`.
inline TransportPlan sinkhorn_wd(const Mat& cost, const std::vector<double>& u, const std::vector<double>& v,
                                 const SinkhornOptions& opts = {}) {
  const std::size_t n = cost.rows, m = cost.cols;
  if (u.size() != n || v.size() != m) throw ContractError("marginal sizes do not match the cost matrix");
  detail::check_marginal(u, "u");
  detail::check_marginal(v, "v");
  if (!(opts.beta > 0.0)) throw ContractError("entropic weight beta must be positive");

  std::vector<double> f(n, 0.0), g(m, 0.0), logu(n), logv(m), buf(std::max(n, m));
  for (std::size_t i = 0; i < n; ++i) logu[i] = std::log(u[i]);
  for (std::size_t j = 0; j < m; ++j) logv[j] = std::log(v[j]);

  TransportPlan out;
  out.u = u;
  out.v = v;
  out.plan = Mat(n, m);
  Mat current(n, m);
  auto fill_plan = [&](Mat& p, double beta) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / beta);
  };
  auto row_violation = [&](const Mat& p) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += p(i, j);
      err += std::abs(s - u[i]);
    }
    return err;
  };
  // Runs iterations at `beta`; returns true once the violation is below tol.
  auto run = [&](double beta, bool record) {
    double best = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opts.max_iter; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) buf[j] = (g[j] - cost(i, j)) / beta;
        f[i] = beta * (logu[i] - detail::log_sum_exp(buf.data(), m, 1));
      }
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) buf[i] = (f[i] - cost(i, j)) / beta;
        g[j] = beta * (logv[j] - detail::log_sum_exp(buf.data(), n, 1));
      }
      fill_plan(current, beta);
      const double viol = row_violation(current);
      if (record) {
        out.violation_history.push_back(viol);
        out.iterations = it;
        if (viol < best) {
          best = viol;
          out.plan = current;
          out.violation = viol;
        }
      }
      if (viol < opts.tol) return true;
    }
    return false;
  };

  const double span = *std::max_element(cost.v.begin(), cost.v.end()) - *std::min_element(cost.v.begin(), cost.v.end());
  std::vector<double> schedule;
  for (double b = span / 8.0; b > 2.0 * opts.beta; b /= 2.0) schedule.push_back(b);
  for (double b : schedule) run(b, false);
  out.converged = run(opts.beta, true);
  out.objective = frobenius_dot(out.plan, cost);
  out.regularized = out.objective;
  for (double p : out.plan.v)
    if (p > 0.0) out.regularized += opts.beta * p * (std::log(p) - 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Gromov-Wasserstein with the absolute-difference quartet loss.
//
// |a - b| does not separate into f(a) + g(b) - h(a) k(b), so the usual
// matrix-product factorisation does not apply. Instead, for each (i', j) the
// values A_t[j, :] weighted by P[i', :] are sorted once with prefix sums, and
// every query a = A_s[i, i'] is answered by binary search:
//   sum_w |a - b| = a W_le - S_le + (S - S_le) - a (W - W_le).
// Cost O(n m^2 log m + n^2 m log m) instead of O(n^2 m^2).

namespace detail {

class WeightedSorted {
 public:
  void reset(const double* values, const double* weights, std::size_t len, std::size_t vstride, std::size_t wstride) {
    idx_.resize(len);
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    std::sort(idx_.begin(), idx_.end(), [&](std::size_t a, std::size_t b) { return values[a * vstride] < values[b * vstride]; });
    keys_.resize(len);
    cw_.assign(len + 1, 0.0);
    cs_.assign(len + 1, 0.0);
    for (std::size_t k = 0; k < len; ++k) {
      const double b = values[idx_[k] * vstride], w = weights[idx_[k] * wstride];
      keys_[k] = b;
      cw_[k + 1] = cw_[k] + w;
      cs_[k + 1] = cs_[k] + w * b;
    }
  }

  // sum_k w_k |a - b_k|
  double abs_sum(double a) const {
    const std::size_t le = std::upper_bound(keys_.begin(), keys_.end(), a) - keys_.begin();
    const double wl = cw_[le], sl = cs_[le], wt = cw_.back(), st = cs_.back();
    return a * wl - sl + (st - sl) - a * (wt - wl);
  }

  // sum_k w_k sign(a - b_k), with sign(0) = 0
  double sign_sum(double a) const {
    const std::size_t lt = std::lower_bound(keys_.begin(), keys_.end(), a) - keys_.begin();
    const std::size_t le = std::upper_bound(keys_.begin(), keys_.end(), a) - keys_.begin();
    return cw_[lt] - (cw_.back() - cw_[le]);
  }

 private:
  std::vector<std::size_t> idx_;
  std::vector<double> keys_, cw_, cs_;
};

}  // namespace detail

struct GwCost {
  double value = 0.0;  // sum_{i,j,i',j'} P_ij P_i'j' L
  Mat pseudo_cost;     // G[i,j] = sum_{i',j'} P_i'j' L(i,j,i',j')
};

inline GwCost gwd_cost(const Mat& as, const Mat& at, const Mat& p) {
  const std::size_t n = as.rows, m = at.rows;
  if (as.cols != n || at.cols != m) throw ContractError("adjacency matrices must be square");
  if (p.rows != n || p.cols != m)
    throw ContractError("plan is " + std::to_string(p.rows) + "x" + std::to_string(p.cols) + ", expected " +
                        std::to_string(n) + "x" + std::to_string(m));
  GwCost out;
  out.pseudo_cost = Mat(n, m);
  detail::WeightedSorted ws;
  for (std::size_t ip = 0; ip < n; ++ip)
    for (std::size_t j = 0; j < m; ++j) {
      ws.reset(&at.v[j * m], &p.v[ip * m], m, 1, 1);
      for (std::size_t i = 0; i < n; ++i) out.pseudo_cost(i, j) += ws.abs_sum(as(i, ip));
    }
  out.value = frobenius_dot(p, out.pseudo_cost);
  return out;
}

// Half the gradient of the quartet energy with respect to P. Equals the
// pseudo-cost when both adjacencies are symmetric.
inline Mat gw_linearization(const Mat& as, const Mat& at, const Mat& p) {
  Mat g = gwd_cost(as, at, p).pseudo_cost;
  const Mat gt = gwd_cost(as.transposed(), at.transposed(), p).pseudo_cost;
  for (std::size_t k = 0; k < g.v.size(); ++k) g.v[k] = 0.5 * (g.v[k] + gt.v[k]);
  return g;
}

// Projected-gradient entropic GW: start from u v^T and alternate
// {linearise at P; P <- Sinkhorn(linearisation)} until P stops moving.
inline TransportPlan entropic_gwd(const Mat& as, const Mat& at, const std::vector<double>& u,
                                  const std::vector<double>& v, const GwOptions& opts = {}) {
  const std::size_t n = as.rows, m = at.rows;
  if (u.size() != n || v.size() != m) throw ContractError("marginal sizes do not match the adjacency matrices");
  detail::check_marginal(u, "u");
  detail::check_marginal(v, "v");
  Mat p(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) p(i, j) = u[i] * v[j];

  TransportPlan out;
  out.plan = p;
  out.u = u;
  out.v = v;
  out.objective = gwd_cost(as, at, p).value;
  for (int it = 1; it <= opts.outer_iter; ++it) {
    TransportPlan inner = sinkhorn_wd(gw_linearization(as, at, out.plan), u, v, opts.sinkhorn);
    double change = 0.0;
    for (std::size_t k = 0; k < p.v.size(); ++k) change = std::max(change, std::abs(inner.plan.v[k] - out.plan.v[k]));
    out.plan = std::move(inner.plan);
    out.iterations = it;
    out.violation = inner.violation;
    out.violation_history.push_back(change);
    if (change < opts.tol && inner.converged) {
      out.converged = true;
      break;
    }
  }
  out.objective = gwd_cost(as, at, out.plan).value;
  return out;
}

// ---------------------------------------------------------------------------
// Fused distance

struct AlignProblem {
  Mat xs, as;  // source embeddings (n x d) and adjacency (n x n)
  Mat xt, at;  // target embeddings (m x d) and adjacency (m x m)
  double lambda = 0.1;
  double beta = 0.05;
};

struct AlignTerms {
  bool use_wd = true;
  bool use_gwd = true;
};

struct GaResult {
  double d_ga = 0.0;
  double wd = 0.0;
  double gwd = 0.0;
  TransportPlan node_plan;  // P
  TransportPlan edge_plan;  // P-hat
};

struct SolverOptions {
  int sinkhorn_iter = 200;
  double sinkhorn_tol = 1e-7;
  int gw_outer = 20;
  double gw_tol = 1e-7;
};

inline GaResult ga_distance(const AlignProblem& pb, const AlignTerms& terms = {}, const SolverOptions& so = {},
                            std::vector<double> u = {}, std::vector<double> v = {}) {
  if (pb.lambda < 0.0) throw ContractError("lambda must be nonnegative");
  if (!(pb.beta > 0.0)) throw ContractError("beta must be positive");
  if (u.empty()) u = uniform_marginal(pb.xs.rows);
  if (v.empty()) v = uniform_marginal(pb.xt.rows);
  const SinkhornOptions sk{pb.beta, so.sinkhorn_iter, so.sinkhorn_tol};
  GaResult r;
  if (terms.use_wd) {
    r.node_plan = sinkhorn_wd(cost_matrix(pb.xs, pb.xt), u, v, sk);
    r.wd = r.node_plan.objective;
  }
  if (terms.use_gwd) {
    r.edge_plan = entropic_gwd(pb.as, pb.at, u, v, GwOptions{sk, so.gw_outer, so.gw_tol});
    r.gwd = r.edge_plan.objective;
  }
  r.d_ga = pb.lambda * (r.wd + r.gwd);
  return r;
}

// ---------------------------------------------------------------------------
// Permutation enumeration: the alignment identity behind conditional node
// alignment. With M_s = A_s X_s and M_t = A_t X_t, a permutation matrix P
// (P[i, sigma(i)] = 1) minimising ||P M_s - M_t||_F^2 is exactly one
// maximising <P M_s, M_t>_F = <P, M_t M_s^T>_F, because ||P M_s||_F does not
// depend on P.

struct PermutationScan {
  std::vector<std::vector<std::size_t>> perms;  // sigma as P[i, sigma(i)] = 1
  std::vector<double> frobenius;                // ||P M_s - M_t||^2
  std::vector<double> inner;                    // <P, M_t M_s^T>
};

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ContractError("matrix product dimension mismatch");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k)
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

inline PermutationScan scan_permutations(const Mat& as, const Mat& xs, const Mat& at, const Mat& xt) {
  if (as.rows != at.rows) throw ContractError("permutation scan needs graphs of equal size");
  if (as.rows > 8) throw ContractError("permutation scan limited to 8 nodes");
  const Mat ms = matmul(as, xs), mt = matmul(at, xt);
  if (ms.cols != mt.cols) throw ContractError("embedding dimensions differ");
  const std::size_t n = ms.rows, d = ms.cols;
  const Mat kernel = matmul(mt, ms.transposed());
  PermutationScan scan;
  std::vector<std::size_t> sigma(n);
  std::iota(sigma.begin(), sigma.end(), std::size_t{0});
  do {
    double fro = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      // (P M_s)_i = M_s[sigma(i)]
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ms(sigma[i], k) - mt(i, k);
        fro += diff * diff;
      }
      dot += kernel(i, sigma[i]);
    }
    scan.perms.push_back(sigma);
    scan.frobenius.push_back(fro);
    scan.inner.push_back(dot);
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return scan;
}

// True iff the set of Frobenius minimisers equals the set of inner-product
// maximisers (ties resolved with a relative tolerance).
inline bool theorem1_check(const Mat& as, const Mat& xs, const Mat& at, const Mat& xt, double rel_tol = 1e-9) {
  if (as.rows != at.rows) throw ContractError("alignment identity check needs n == m");
  const auto scan = scan_permutations(as, xs, at, xt);
  const double fmin = *std::min_element(scan.frobenius.begin(), scan.frobenius.end());
  const double imax = *std::max_element(scan.inner.begin(), scan.inner.end());
  const double ftol = rel_tol * (1.0 + std::abs(fmin));
  const double itol = rel_tol * (1.0 + std::abs(imax));
  for (std::size_t k = 0; k < scan.perms.size(); ++k) {
    const bool is_min = scan.frobenius[k] <= fmin + ftol;
    const bool is_max = scan.inner[k] >= imax - itol;
    if (is_min != is_max) return false;
  }
  return true;
}

inline std::vector<std::size_t> best_permutation(const Mat& as, const Mat& xs, const Mat& at, const Mat& xt) {
  const auto scan = scan_permutations(as, xs, at, xt);
  const auto k = std::min_element(scan.frobenius.begin(), scan.frobenius.end()) - scan.frobenius.begin();
  return scan.perms[k];
}

// ---------------------------------------------------------------------------
// Differentiable terms with frozen plans

// Row-wise Euclidean distances [n, d] x [m, d] -> [n, m]. A tiny floor inside
// the root keeps the derivative finite for coincident points.
inline Tensor pairwise_distance(const Tensor& xs, const Tensor& xt, double floor = 1e-12) {
  if (xs.rank() != 2 || xt.rank() != 2 || xs.dim(1) != xt.dim(1))
    throw ContractError("pairwise_distance shape mismatch: " + shape_str(xs.shape()) + " vs " + shape_str(xt.shape()));
  const std::size_t n = xs.dim(0), m = xt.dim(0), d = xs.dim(1);
  auto a = xs.values();
  auto b = xt.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = floor;
      for (std::size_t k = 0; k < d; ++k) s += (a[i * d + k] - b[j * d + k]) * (a[i * d + k] - b[j * d + k]);
      out[i * m + j] = std::sqrt(s);
    }
  return detail::make_result({n, m}, std::move(out), {xs, xt}, [n, m, d](detail::Node& self) {
    auto& ps = *self.parents[0];
    auto& pt = *self.parents[1];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = self.grad[i * m + j] / self.data[i * m + j];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = ps.data[i * d + k] - pt.data[j * d + k];
          if (ps.requires_grad) ps.grad_buffer()[i * d + k] += g * diff;
          if (pt.requires_grad) pt.grad_buffer()[j * d + k] -= g * diff;
        }
      }
  });
}

// sum_{i,j,i',j'} P_ij P_i'j' |A_s[i,i'] - A_t[j,j']| with P held constant.
inline Tensor gw_energy(const Tensor& as, const Tensor& at, const Mat& p) {
  const Mat ms = Mat::of(as), mt = Mat::of(at);
  const double value = gwd_cost(ms, mt, p).value;
  return detail::make_result({1}, {value}, {as, at}, [p](detail::Node& self) {
    auto& ns = *self.parents[0];
    auto& nt = *self.parents[1];
    const std::size_t n = p.rows, m = p.cols;
    const double g = self.grad[0];
    detail::WeightedSorted ws;
    if (ns.requires_grad) {
      // d/dA_s[i,i'] = sum_j P_ij sum_j' P_i'j' sign(A_s[i,i'] - A_t[j,j'])
      auto& gs = ns.grad_buffer();
      for (std::size_t ip = 0; ip < n; ++ip)
        for (std::size_t j = 0; j < m; ++j) {
          ws.reset(&nt.data[j * m], &p.v[ip * m], m, 1, 1);
          for (std::size_t i = 0; i < n; ++i) gs[i * n + ip] += g * p(i, j) * ws.sign_sum(ns.data[i * n + ip]);
        }
    }
    if (nt.requires_grad) {
      // d/dA_t[j,j'] = sum_i P_ij sum_i' P_i'j' sign(A_t[j,j'] - A_s[i,i'])
      auto& gt = nt.grad_buffer();
      for (std::size_t jp = 0; jp < m; ++jp)
        for (std::size_t i = 0; i < n; ++i) {
          ws.reset(&ns.data[i * n], &p.v[jp], n, 1, m);
          for (std::size_t j = 0; j < m; ++j) gt[j * m + jp] += g * p(i, j) * ws.sign_sum(nt.data[j * m + jp]);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch alignment: every window against the reference graph formed from the
// other windows of its batch.

enum class OmegaMode { mean, concat };

struct BatchAlignConfig {
  double lambda = 0.1;
  double beta = 0.05;
  OmegaMode omega = OmegaMode::mean;
  AlignTerms terms;
  SolverOptions solver;
  unsigned threads = 1;
};

struct WindowAlignment {
  double wd = 0.0;
  double gwd = 0.0;
  double d_ga = 0.0;  // lambda * (wd + gwd)
  Mat node_plan;
  Mat edge_plan;
  bool converged = true;
};

// Reference graph for window i as tape tensors: embeddings and adjacency.
inline std::pair<Tensor, Tensor> omega_graph(const Tensor& emb, const Tensor& adj, std::size_t i, OmegaMode mode,
                                             const Tensor& emb_sum = {}, const Tensor& adj_sum = {}) {
  const std::size_t bs = emb.dim(0);
  if (mode == OmegaMode::mean) {
    const double w = 1.0 / static_cast<double>(bs - 1);
    Tensor es = emb_sum.defined() ? emb_sum : sum_first(emb);
    Tensor as = adj_sum.defined() ? adj_sum : sum_first(adj);
    return {scale(es - index_first(emb, i), w), scale(as - index_first(adj, i), w)};
  }
  std::vector<Tensor> rows, blocks;
  for (std::size_t k = 0; k < bs; ++k)
    if (k != i) {
      rows.push_back(index_first(emb, k));
      blocks.push_back(index_first(adj, k));
    }
  Tensor stacked = stack_first(rows);
  return {reshape(stacked, {(bs - 1) * emb.dim(1), emb.dim(2)}), block_diag(blocks)};
}

template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t k = t; k < count; k += threads) fn(k);
    });
  for (auto& th : pool) th.join();
}

// Solves the per-window plans on the current values. emb [B,N,d], adj [B,N,N].
inline std::vector<WindowAlignment> batch_alignment(const Tensor& emb, const Tensor& adj, const BatchAlignConfig& cfg) {
  if (emb.rank() != 3 || adj.rank() != 3 || emb.dim(0) != adj.dim(0) || emb.dim(1) != adj.dim(1))
    throw ContractError("batch alignment needs embeddings [B,N,d] and adjacency [B,N,N]");
  const std::size_t bs = emb.dim(0);
  if (bs < 2) throw ContractError("batch alignment needs at least 2 windows, got " + std::to_string(bs));
  const Tensor e = emb.detach(), a = adj.detach();
  const Tensor es = sum_first(e), as = sum_first(a);
  std::vector<WindowAlignment> out(bs);
  // Tensor construction is not shared across threads: build inputs first.
  std::vector<AlignProblem> problems(bs);
  for (std::size_t i = 0; i < bs; ++i) {
    auto [eo, ao] = omega_graph(e, a, i, cfg.omega, es, as);
    problems[i] = AlignProblem{Mat::of(index_first(e, i)), Mat::of(index_first(a, i)), Mat::of(eo), Mat::of(ao),
                               cfg.lambda, cfg.beta};
  }
  parallel_for(bs, cfg.threads, [&](std::size_t i) {
    GaResult r = ga_distance(problems[i], cfg.terms, cfg.solver);
    out[i].wd = r.wd;
    out[i].gwd = r.gwd;
    out[i].d_ga = r.d_ga;
    out[i].node_plan = std::move(r.node_plan.plan);
    out[i].edge_plan = std::move(r.edge_plan.plan);
    out[i].converged = (!cfg.terms.use_wd || r.node_plan.converged) && (!cfg.terms.use_gwd || r.edge_plan.converged);
  });
  return out;
}

// Mean over windows of lambda * (<P, C(X_i, X_Omega)> + GW energy at P-hat),
// differentiable in embeddings and adjacency with the plans frozen.
inline Tensor alignment_loss(const Tensor& emb, const Tensor& adj, const std::vector<WindowAlignment>& plans,
                             const BatchAlignConfig& cfg) {
  const std::size_t bs = emb.dim(0);
  Tensor es = sum_first(emb), as = sum_first(adj);
  Tensor total;
  for (std::size_t i = 0; i < bs; ++i) {
    auto [eo, ao] = omega_graph(emb, adj, i, cfg.omega, es, as);
    Tensor term;
    if (cfg.terms.use_wd) term = sum(pairwise_distance(index_first(emb, i), eo) * plans[i].node_plan.tensor());
    if (cfg.terms.use_gwd) {
      Tensor g = gw_energy(index_first(adj, i), ao, plans[i].edge_plan);
      term = term.defined() ? term + g : g;
    }
    if (!term.defined()) continue;
    total = total.defined() ? total + term : term;
  }
  if (!total.defined()) return Tensor::scalar(0.0);
  return scale(total, cfg.lambda / static_cast<double>(bs));
}

}  // namespace gadet
