#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "gadet/tensor.hpp"

namespace gadet {

// Seeded generator shared by initialisation, shuffling and synthesis. One
// machine + one seed gives one stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, eng_);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor normal_tensor(Shape shape, double sd, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace gadet
