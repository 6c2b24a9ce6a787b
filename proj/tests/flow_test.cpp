#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gadet/flow.hpp"
#include "gadet/gradcheck.hpp"

using namespace gadet;

namespace {

std::vector<double> forward_row(const FlowModel& f, const std::vector<double>& x, const std::vector<double>& c) {
  auto z = f.forward(Tensor::from({1, x.size()}, x), Tensor::from({1, c.size()}, c)).first;
  return {z.values().begin(), z.values().end()};
}

double log_det_row(const FlowModel& f, const std::vector<double>& x, const std::vector<double>& c) {
  return f.forward(Tensor::from({1, x.size()}, x), Tensor::from({1, c.size()}, c)).second.item();
}

// Central-difference Jacobian J[k][j] = dz_k / dx_j.
std::vector<std::vector<double>> jacobian(const FlowModel& f, const std::vector<double>& x, const std::vector<double>& c) {
  const std::size_t n = x.size();
  const double eps = 1e-6;
  std::vector<std::vector<double>> jac(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    auto up = x, down = x;
    up[j] += eps;
    down[j] -= eps;
    auto zu = forward_row(f, up, c), zd = forward_row(f, down, c);
    for (std::size_t k = 0; k < n; ++k) jac[k][j] = (zu[k] - zd[k]) / (2 * eps);
  }
  return jac;
}

// log|det| by partial-pivot Gaussian elimination.
double log_abs_det(std::vector<std::vector<double>> m) {
  const std::size_t n = m.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    std::swap(m[c], m[piv]);
    acc += std::log(std::abs(m[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      double k = m[r][c] / m[c][c];
      for (std::size_t q = c; q < n; ++q) m[r][q] -= k * m[c][q];
    }
  }
  return acc;
}

std::vector<double> draw(std::size_t n, Rng& rng, double sd = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

double std_normal_log_density(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return -0.5 * s - 0.5 * static_cast<double>(x.size()) * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST(Flow, IdentityFlowIsStandardNormal) {
  Rng rng(1);
  auto f = FlowModel::identity(4, 3, 2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = draw(4, rng, 2.0), c = draw(3, rng);
    EXPECT_NEAR(f.log_prob(x, c), std_normal_log_density(x), 1e-12);
  }
}

TEST(Flow, SingleCoordinateClosedForm) {
  Rng rng(2);
  auto f = FlowModel::random(1, 2, 1, 0.8, rng);
  const auto& L = f.layers()[0];
  const std::vector<double> c{0.3, -1.1};
  const double raw_s = c[0] * L.scale_c[0] + c[1] * L.scale_c[1] + L.scale_b[0];
  const double m = c[0] * L.shift_c[0] + c[1] * L.shift_c[1] + L.shift_b[0];
  const double s = 5.0 * std::tanh(raw_s / 5.0);
  for (double x : {-2.0, 0.0, 0.7, 3.0}) {
    const double z = std::exp(s) * x + m;
    const double expect = -0.5 * z * z - 0.5 * std::log(2 * std::numbers::pi) + s;
    EXPECT_NEAR(f.log_prob(std::vector<double>{x}, c), expect, 1e-12);
  }
}

TEST(Flow, LogDetMatchesNumericJacobian) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const std::size_t dim = 1 + static_cast<std::size_t>(seed) % 4;
    auto f = FlowModel::random(dim, 3, 2, 0.5, rng);
    auto x = draw(dim, rng), c = draw(3, rng);
    EXPECT_NEAR(log_det_row(f, x, c), log_abs_det(jacobian(f, x, c)), 1e-4) << seed;
  }
}

TEST(Flow, InverseRecoversInput) {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t dim = 1 + rng.index(6), depth = 1 + rng.index(2);
    auto f = FlowModel::random(dim, 2, depth, 0.5, rng);
    auto x = draw(dim, rng), c = draw(2, rng);
    auto back = f.inverse(forward_row(f, x, c), c);
    for (std::size_t k = 0; k < dim; ++k) worst = std::max(worst, std::abs(back[k] - x[k]));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Flow, SingleLayerIsAutoregressive) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto f = FlowModel::random(6, 2, 1, 0.7, rng);
    auto jac = jacobian(f, draw(6, rng), draw(2, rng));
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t j = k + 1; j < 6; ++j) EXPECT_EQ(jac[k][j], 0.0) << k << "," << j;
    for (std::size_t k = 0; k < 6; ++k) EXPECT_GT(std::abs(jac[k][k]), 0.0);
  }
}

TEST(Flow, MaskIsStrictlyUpperTriangular) {
  Rng rng(5);
  auto f = FlowModel::random(4, 1, 2, 0.1, rng);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(f.mask()[a * 4 + b], a < b ? 1.0 : 0.0);
}

TEST(Flow, DensityIntegratesToOne) {
  Rng rng(6);
  auto f1 = FlowModel::random(1, 2, 2, 0.6, rng);
  const std::vector<double> c{0.4, -0.2};
  double total = 0.0;
  const double h = 1e-3;
  for (double x = -40.0; x <= 40.0; x += h) total += std::exp(f1.log_prob(std::vector<double>{x}, c)) * h;
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(Flow, BatchLikelihoodIsMeanOfRows) {
  Rng rng(7);
  auto f = FlowModel::random(4, 3, 2, 0.4, rng);
  auto feats = normal_tensor({2, 3, 4}, 1.0, rng);
  auto emb = normal_tensor({2, 3, 3}, 1.0, rng);
  double expect = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> x(feats.values().begin() + r * 4, feats.values().begin() + r * 4 + 4);
    std::vector<double> c(emb.values().begin() + r * 3, emb.values().begin() + r * 3 + 3);
    expect += f.log_prob(x, c) / 6.0;
  }
  EXPECT_NEAR(batch_log_likelihood(feats, emb, f).item(), expect, 1e-12);

  // swapping the two windows leaves the mean unchanged
  std::vector<double> fv(feats.values().begin(), feats.values().end()), ev(emb.values().begin(), emb.values().end());
  std::rotate(fv.begin(), fv.begin() + 12, fv.end());
  std::rotate(ev.begin(), ev.begin() + 9, ev.end());
  EXPECT_NEAR(batch_log_likelihood(Tensor::from({2, 3, 4}, fv), Tensor::from({2, 3, 3}, ev), f).item(), expect, 1e-12);
}

TEST(Flow, ScalesStayBounded) {
  Rng rng(8);
  auto f = FlowModel::random(3, 1, 1, 50.0, rng);
  auto ld = log_det_row(f, draw(3, rng, 10.0), {5.0});
  EXPECT_LE(std::abs(ld), 3 * kScaleBound + 1e-12);
}

TEST(Flow, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    auto f = FlowModel::random(4, 3, 2, 0.4, rng);
    auto x = normal_tensor({5, 4}, 1.0, rng, true);
    auto c = normal_tensor({5, 3}, 1.0, rng, true);
    auto leaves = f.tensors();
    leaves.push_back(x);
    leaves.push_back(c);
    EXPECT_TRUE(grad_check([&] { return sum(f.log_prob(x, c)); }, leaves).passed(1e-4)) << seed;
  }
}

TEST(Flow, RejectsMismatchedShapes) {
  auto f = FlowModel::identity(4, 3, 1);
  EXPECT_THROW(f.log_prob(Tensor::zeros({2, 5}), Tensor::zeros({2, 3})), ContractError);
  EXPECT_THROW(f.log_prob(Tensor::zeros({2, 4}), Tensor::zeros({3, 3})), ContractError);
  EXPECT_THROW(f.inverse(std::vector<double>(3), std::vector<double>(3)), ContractError);
}
