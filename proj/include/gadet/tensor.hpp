#pragma once

// Dense float64 tensors with a record-on-forward reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Every op allocates a fresh
// output buffer (outputs never alias inputs) and, when any operand requires a
// gradient, records its parents and a backward rule. `backward(loss)` orders
// the reachable nodes topologically and runs the rules in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gadet/error.hpp"

namespace gadet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape.empty()) shape = {1};
    for (auto d : shape)
      if (d == 0) throw ContractError("tensor dimension must be positive, got " + shape_str(shape));
    if (numel(shape) != data.size())
      throw ContractError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> values() const { return node_->data; }
  // Mutable access for leaves (parameter updates, test fixtures).
  std::span<double> mutable_values() { return node_->data; }
  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  // A copy of the values with no tape history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op output. `rule` runs only when some parent requires a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(Node&)> rule) {
  Tensor out = Tensor::from(std::move(shape), std::move(data), false);
  bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (any) {
    auto* n = out.node();
    n->requires_grad = true;
    n->leaf = false;
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(rule);
  }
  return out;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Binary { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, Binary op) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape()))
    throw ContractError("shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                        " are not broadcastable");
  const Shape& out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = numel(out_shape), na = a.size(), nb = b.size();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[i % na], y = bv[i % nb];
    out[i] = op == Binary::add ? x + y : op == Binary::sub ? x - y : x * y;
  }
  return make_result(out_shape, std::move(out), {a, b}, [op, n, na, nb](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        ga[i % na] += op == Binary::mul ? g[i] * pb.data[i % nb] : g[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        gb[i % nb] += op == Binary::add ? g[i] : op == Binary::sub ? -g[i] : g[i] * pa.data[i % na];
    }
  });
}

// Pointwise op whose derivative is expressed in terms of input x and output y.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    auto& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::mul); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double x : a.values())
    if (!(x > 0.0)) throw DomainError("log of nonpositive value " + std::to_string(x));
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sum(const Tensor& a) {
  auto v = a.values();
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  return detail::make_result({1}, {s}, {a}, [](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (auto& g : gp) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Sum over the last axis; shape [..., m] -> [...] (rank-1 input gives [1]).
inline Tensor sum_last(const Tensor& a) {
  const std::size_t m = a.shape().back(), rows = a.size() / m;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto v = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r] += v[r * m + j];
  return detail::make_result(out_shape, std::move(out), {a}, [m, rows](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) gp[r * m + j] += self.grad[r];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ContractError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ContractError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  return detail::make_result({m, n}, std::move(C), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.requires_grad) {  // dA = dC * B^T
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * pb.data[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {  // dB = A^T * dC
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = pa.data[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ContractError("bmm dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  auto A = a.values();
  auto B = b.values();
  std::vector<double> C(bs * m * n, 0.0);
  for (std::size_t t = 0; t < bs; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[(t * m + i) * k + p];
        for (std::size_t j = 0; j < n; ++j) C[(t * m + i) * n + j] += aip * B[(t * k + p) * n + j];
      }
  return detail::make_result({bs, m, n}, std::move(C), {a, b}, [bs, m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& G = self.grad;
    for (std::size_t t = 0; t < bs; ++t)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const std::size_t ai = (t * m + i) * k + p;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double g = G[(t * m + i) * n + j];
            s += g * pb.data[(t * k + p) * n + j];
            if (pb.requires_grad) pb.grad_buffer()[(t * k + p) * n + j] += pa.data[ai] * g;
          }
          if (pa.requires_grad) pa.grad_buffer()[ai] += s;
        }
  });
}

// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) throw ContractError("transpose needs rank 2 or 3, got " + shape_str(a.shape()));
  const std::size_t bs = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.shape()[a.rank() - 2], n = a.shape().back();
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t t = 0; t < bs; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[t * m * n + j * m + i] = v[t * m * n + i * n + j];
  return detail::make_result(out_shape, std::move(out), {a}, [bs, m, n](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < bs; ++t)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gp[t * m * n + i * n + j] += self.grad[t * m * n + j * m + i];
  });
}

// Row-wise softmax over the last axis with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.shape().back(), rows = x.size() / m;
  auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[r * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [m, rows](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[r * m + j] * self.data[r * m + j];
      for (std::size_t j = 0; j < m; ++j) gp[r * m + j] += self.data[r * m + j] * (self.grad[r * m + j] - dot);
    }
  });
}

// Concatenates along the last axis; all leading dimensions must agree.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_last of zero tensors");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  const std::size_t rows = numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) throw ContractError("concat_last leading shape mismatch: " + shape_str(p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return detail::make_result(out_shape, std::move(out), parts, [rows, total, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        auto& gp = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += self.grad[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

// Columns [begin, end) of the last axis.
inline Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t m = a.shape().back();
  if (begin >= end || end > m) throw ContractError("slice_last range out of bounds for " + shape_str(a.shape()));
  const std::size_t rows = a.size() / m, w = end - begin;
  auto v = a.values();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * m + begin, w, out.data() + r * w);
  Shape out_shape = a.shape();
  out_shape.back() = w;
  return detail::make_result(out_shape, std::move(out), {a}, [rows, m, w, begin](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gp[r * m + begin + j] += self.grad[r * w + j];
  });
}

inline Tensor reverse_last(const Tensor& a) {
  const std::size_t m = a.shape().back(), rows = a.size() / m;
  auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = v[r * m + (m - 1 - j)];
  return detail::make_result(a.shape(), std::move(out), {a}, [rows, m](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) gp[r * m + (m - 1 - j)] += self.grad[r * m + j];
  });
}

// [..., 1] -> [..., m] by repeating the single column.
inline Tensor expand_last(const Tensor& a, std::size_t m) {
  if (a.shape().back() != 1) throw ContractError("expand_last needs a trailing unit axis, got " + shape_str(a.shape()));
  const std::size_t rows = a.size();
  std::vector<double> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.data() + r * m, m, a.values()[r]);
  Shape out_shape = a.shape();
  out_shape.back() = m;
  return detail::make_result(out_shape, std::move(out), {a}, [rows, m](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) gp[r] += self.grad[r * m + j];
  });
}

// a[i] along the first axis.
inline Tensor index_first(const Tensor& a, std::size_t i) {
  if (a.rank() < 2 || i >= a.dim(0)) throw ContractError("index_first out of range for " + shape_str(a.shape()));
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t w = numel(out_shape);
  std::vector<double> out(a.values().begin() + i * w, a.values().begin() + (i + 1) * w);
  return detail::make_result(out_shape, std::move(out), {a}, [i, w](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += self.grad[j];
  });
}

// Sum over the first axis: [B, ...] -> [...].
inline Tensor sum_first(const Tensor& a) {
  if (a.rank() < 2) throw ContractError("sum_first needs rank >= 2, got " + shape_str(a.shape()));
  const std::size_t bs = a.dim(0);
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const std::size_t w = numel(out_shape);
  std::vector<double> out(w, 0.0);
  for (std::size_t t = 0; t < bs; ++t)
    for (std::size_t j = 0; j < w; ++j) out[j] += a.values()[t * w + j];
  return detail::make_result(out_shape, std::move(out), {a}, [bs, w](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t t = 0; t < bs; ++t)
      for (std::size_t j = 0; j < w; ++j) gp[t * w + j] += self.grad[j];
  });
}

// Stacks equally shaped tensors along a new first axis.
inline Tensor stack_first(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack_first of zero tensors");
  const Shape inner = parts[0].shape();
  const std::size_t w = numel(inner);
  std::vector<double> out;
  out.reserve(w * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != inner) throw ContractError("stack_first shape mismatch: " + shape_str(p.shape()));
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  return detail::make_result(out_shape, std::move(out), parts, [w](detail::Node& self) {
    for (std::size_t t = 0; t < self.parents.size(); ++t) {
      auto& p = *self.parents[t];
      if (!p.requires_grad) continue;
      auto& gp = p.grad_buffer();
      for (std::size_t j = 0; j < w; ++j) gp[j] += self.grad[t * w + j];
    }
  });
}

// Block-diagonal matrix from square blocks.
inline Tensor block_diag(const std::vector<Tensor>& blocks) {
  std::size_t total = 0;
  for (const auto& b : blocks) {
    if (b.rank() != 2 || b.dim(0) != b.dim(1)) throw ContractError("block_diag needs square blocks");
    total += b.dim(0);
  }
  std::vector<double> out(total * total, 0.0);
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const auto& b : blocks) {
    const std::size_t n = b.dim(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(off + i) * total + off + j] = b.values()[i * n + j];
    offs.push_back(off);
    off += n;
  }
  return detail::make_result({total, total}, std::move(out), blocks, [offs, total](detail::Node& self) {
    for (std::size_t k = 0; k < offs.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const std::size_t n = p.shape[0];
      auto& gp = p.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gp[i * n + j] += self.grad[(offs[k] + i) * total + offs[k] + j];
    }
  });
}

// Runs reverse-mode accumulation from a scalar loss. Leaf gradients add onto
// whatever they already hold; intermediate gradients are reset first.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any parameter requiring a gradient");

  // Iterative post-order DFS gives a topological tape.
  std::vector<detail::Node*> tape;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      tape.push_back(n);
      stack.pop_back();
    }
  }
  for (auto* n : tape)
    if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace gadet
