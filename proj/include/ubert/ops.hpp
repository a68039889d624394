// Differentiable primitives over 2-D row-major tensors.
//
// Broadcasting exists only in add_bias. Every primitive checks its operand
// shapes and names itself in the diagnostic.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ubert/tensor.hpp"

namespace ubert {

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <std::floating_point T>
void require_matrix(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

// out[m,n] (+)= a[m,k] * b[k,n]; each output row depends only on its own
// input row, which keeps results independent of how many rows are batched.
template <std::floating_point T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out + i * n;
    const T* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m,k] += g[m,n] * b[k,n]^T, via a transposed copy of b so the inner
// loop is an axpy rather than a reduction.
template <std::floating_point T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(g, bt.data(), out, m, n, k);
}

// out[k,n] += a[m,k]^T * g[m,n]
template <std::floating_point T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    const T* gr = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      if (av == T(0)) continue;
      T* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) detail::shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node<T>& node) {
    const T* g = node.grad.data();
    const T* av = node.inputs[0]->value.data();
    const T* bv = node.inputs[1]->value.data();
    if (T* ga = detail::grad_of(node, 0)) detail::gemm_nt(g, bv, ga, m, k, n);
    if (T* gb = detail::grad_of(node, 1)) detail::gemm_tn(av, g, gb, m, k, n);
  });
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& node) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (T* gi = detail::grad_of(node, s)) {
        for (std::size_t i = 0; i < node.grad.size(); ++i) gi[i] += node.grad[i];
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
    }
    if (T* gb = detail::grad_of(node, 1)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) gb[i] -= node.grad[i];
    }
  });
}

// x[m,n] + bias[n] broadcast over rows; bias may be [n] or [1,n].
template <std::floating_point T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_matrix("add_bias", x);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.size() != n || (bias.rank() == 2 && bias.shape()[0] != 1) || bias.rank() > 2) {
    detail::shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return detail::make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias}, [m, n](detail::Node<T>& node) {
    if (T* gx = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += node.grad[i];
    }
    if (T* gb = detail::grad_of(node, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += node.grad[i * n + j];
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& node) {
    const auto& av = node.inputs[0]->value;
    const auto& bv = node.inputs[1]->value;
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * bv[i];
    }
    if (T* gb = detail::grad_of(node, 1)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) gb[i] += node.grad[i] * av[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return detail::make_result<T>("scale", a.shape(), std::move(out), {&a}, [factor](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * factor;
    }
  });
}

namespace detail {

// Elementwise map where the derivative is expressed through (input, output).
template <std::floating_point T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a}, [dfdx](Node<T>& node) {
    if (T* ga = grad_of(node, 0)) {
      const auto& x = node.inputs[0]->value;
      for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * dfdx(x[i], node.value[i]);
    }
  });
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      "sigmoid", a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// Exact (erf-based) GELU.
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <std::floating_point T>
Tensor<T> row_softmax(const Tensor<T>& a) {
  detail::require_matrix("row_softmax", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    T* y = out.data() + i * n;
    const T mx = *std::max_element(x, x + n);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  }
  return detail::make_result<T>("row_softmax", a.shape(), std::move(out), {&a}, [m, n](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const T* y = node.value.data() + i * n;
        const T* g = node.grad.data() + i * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[j] * (g[j] - dot);
      }
    }
  });
}

// Per-row normalization to zero mean / unit variance, then gain and bias.
template <std::floating_point T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  detail::require_matrix("layernorm", x);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gain.size() != n) detail::shape_mismatch("layernorm", x.shape(), gain.shape());
  if (bias.size() != n) detail::shape_mismatch("layernorm", x.shape(), bias.shape());
  std::vector<T> out(x.size());
  // normalized values and inverse std are kept for the backward pass
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = x.data().data() + i * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (r[j] - mean) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::make_result<T>(
      "layernorm", x.shape(), std::move(out), {&x, &gain, &bias}, [m, n, xhat, inv_std](detail::Node<T>& node) {
        const T* g = node.grad.data();
        const auto& gamma = node.inputs[1]->value;
        if (T* gx = detail::grad_of(node, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            T sum_dh = 0, sum_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = g[i * n + j] * gamma[j];
              sum_dh += dh;
              sum_dh_h += dh * (*xhat)[i * n + j];
            }
            const T is = (*inv_std)[i];
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = g[i * n + j] * gamma[j];
              gx[i * n + j] += is * (dh - sum_dh / T(n) - (*xhat)[i * n + j] * sum_dh_h / T(n));
            }
          }
        }
        if (T* gg = detail::grad_of(node, 1)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (T* gb = detail::grad_of(node, 2)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      });
}

// Concatenation along the last axis; all parts share the row count.
template <std::floating_point T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_cols", p);
    if (p.rows() != m) detail::shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(m * total);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < parts.size(); ++s) {
      std::copy_n(parts[s].data().data() + i * widths[s], widths[s], out.data() + i * total + off);
      off += widths[s];
    }
  }
  return detail::make_result<T>("concat_cols", {m, total}, std::move(out), parts,
                                [m, total, widths](detail::Node<T>& node) {
                                  std::size_t off = 0;
                                  for (std::size_t s = 0; s < widths.size(); ++s) {
                                    if (T* gs = detail::grad_of(node, s)) {
                                      for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < widths[s]; ++j)
                                          gs[i * widths[s] + j] += node.grad[i * total + off + j];
                                    }
                                    off += widths[s];
                                  }
                                });
}

// Concatenation along the first axis; all parts share the column count.
template <std::floating_point T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::require_matrix("concat_rows", p);
    if (p.cols() != n) detail::shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    offsets.push_back(m * n);
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result<T>("concat_rows", {m, n}, std::move(out), parts, [offsets](detail::Node<T>& node) {
    for (std::size_t s = 0; s < offsets.size(); ++s) {
      if (T* gs = detail::grad_of(node, s)) {
        const std::size_t len = node.inputs[s]->value.size();
        for (std::size_t i = 0; i < len; ++i) gs[i] += node.grad[offsets[s] + i];
      }
    }
  });
}

// Rows picked by index (repeats allowed); the general slicing primitive.
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> indices) {
  detail::require_matrix("gather_rows", a);
  const std::size_t n = a.cols();
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  std::vector<T> out(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(indices[r]) + " out of range for " + shape_string(a.shape()));
    }
    std::copy_n(a.data().data() + indices[r] * n, n, out.data() + r * n);
  }
  const std::size_t m = indices.size();
  return detail::make_result<T>("gather_rows", {m, n}, std::move(out), {&a},
                                [n, idx = std::move(indices)](detail::Node<T>& node) {
                                  if (T* ga = detail::grad_of(node, 0)) {
                                    for (std::size_t r = 0; r < idx.size(); ++r)
                                      for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += node.grad[r * n + j];
                                  }
                                });
}

template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice_rows", a);
  if (begin >= end || end > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_string(a.shape()));
  }
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather_rows(a, std::move(idx));
}

template <std::floating_point T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_string(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(a.data().data() + i * n + begin, w, out.data() + i * w);
  return detail::make_result<T>("slice_cols", {m, w}, std::move(out), {&a}, [m, n, w, begin](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += node.grad[i * w + j];
    }
  });
}

// Row lookup into an embedding table [vocab, dim].
template <std::floating_point T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  detail::require_matrix("embedding", table);
  std::vector<std::size_t> idx(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_string(table.shape()));
    }
    idx[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, std::move(idx));
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return detail::make_result<T>("sum", {1}, {s}, {&a}, [](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      const std::size_t n = node.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += node.grad[0];
    }
  });
}

// Column-wise mean over rows: [m,n] -> [1,n].
template <std::floating_point T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  detail::require_matrix("mean_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  for (auto& v : out) v /= T(m);
  return detail::make_result<T>("mean_rows", {1, n}, std::move(out), {&a}, [m, n](detail::Node<T>& node) {
    if (T* ga = detail::grad_of(node, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += node.grad[j] / T(m);
    }
  });
}

// Column-wise max over rows: [m,n] -> [1,n]; ties go to the first row.
template <std::floating_point T>
Tensor<T> max_rows(const Tensor<T>& a) {
  detail::require_matrix("max_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.data().begin(), a.data().begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (a.data()[i * n + j] > out[j]) {
        out[j] = a.data()[i * n + j];
        arg[j] = i;
      }
    }
  return detail::make_result<T>("max_rows", {1, n}, std::move(out), {&a},
                                [n, arg = std::move(arg)](detail::Node<T>& node) {
                                  if (T* ga = detail::grad_of(node, 0)) {
                                    for (std::size_t j = 0; j < n; ++j) ga[arg[j] * n + j] += node.grad[j];
                                  }
                                });
}

// Mean binary cross-entropy on logits against 0/1 targets, computed in the
// overflow-safe form max(x,0) - x*y + log(1 + exp(-|x|)).
template <std::floating_point T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets, std::span<const T> weights = {}) {
  if (logits.size() != targets.size()) {
    throw ShapeError("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (!weights.empty() && weights.size() != targets.size()) {
    throw ShapeError("bce_with_logits: weight count does not match targets");
  }
  const std::size_t n = targets.size();
  std::vector<T> y(targets.begin(), targets.end());
  std::vector<T> w(n, T(1));
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T x = logits.data()[i];
    loss += w[i] * (std::max(x, T(0)) - x * y[i] + std::log1p(std::exp(-std::abs(x))));
  }
  loss /= T(n);
  return detail::make_result<T>("bce_with_logits", {1}, {loss}, {&logits},
                                [y = std::move(y), w = std::move(w)](detail::Node<T>& node) {
                                  if (T* gl = detail::grad_of(node, 0)) {
                                    const auto& x = node.inputs[0]->value;
                                    const std::size_t cnt = y.size();
                                    for (std::size_t i = 0; i < cnt; ++i) {
                                      const T p = x[i] >= 0 ? T(1) / (T(1) + std::exp(-x[i]))
                                                            : std::exp(x[i]) / (T(1) + std::exp(x[i]));
                                      gl[i] += node.grad[0] * w[i] * (p - y[i]) / T(cnt);
                                    }
                                  }
                                });
}

// Multi-head scaled dot-product self-attention over a batch of equal-width
// windows. qkv is [batch*width, 3*dim] laid out as Q | K | V; key_mask holds
// one entry per row (0 = padding). Padded keys get -inf logits, so padding
// never reaches a real position. Returns [batch*width, dim].
template <std::floating_point T>
Tensor<T> masked_self_attention(const Tensor<T>& qkv, std::span<const std::uint8_t> key_mask, std::size_t batch,
                                std::size_t heads) {
  detail::require_matrix("masked_self_attention", qkv);
  const std::size_t rows = qkv.rows();
  if (batch == 0 || rows % batch != 0 || qkv.cols() % 3 != 0) {
    throw ShapeError("masked_self_attention: qkv " + shape_string(qkv.shape()) + " does not split into " +
                     std::to_string(batch) + " windows of Q|K|V");
  }
  if (key_mask.size() != rows) {
    throw ShapeError("masked_self_attention: mask length " + std::to_string(key_mask.size()) + " vs " +
                     std::to_string(rows) + " rows");
  }
  const std::size_t dim = qkv.cols() / 3;
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("masked_self_attention: " + std::to_string(heads) + " heads do not divide width " +
                     std::to_string(dim));
  }
  const std::size_t width = rows / batch, hd = dim / heads, stride = 3 * dim;
  const T inv_scale = T(1) / std::sqrt(T(hd));
  const T neg_inf = -std::numeric_limits<T>::infinity();
  const T* src = qkv.data().data();

  auto probs = std::make_shared<std::vector<T>>(batch * heads * width * width);
  std::vector<T> out(rows * dim, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * width;
    bool any_key = false;
    for (std::size_t j = 0; j < width; ++j) any_key = any_key || key_mask[r0 + j];
    if (!any_key) throw std::invalid_argument("masked_self_attention: window " + std::to_string(b) + " is all padding");
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs->data() + (b * heads + h) * width * width;
      const std::size_t qo = h * hd, ko = dim + h * hd, vo = 2 * dim + h * hd;
      for (std::size_t i = 0; i < width; ++i) {
        const T* q = src + (r0 + i) * stride + qo;
        T* prow = P + i * width;
        T mx = neg_inf;
        for (std::size_t j = 0; j < width; ++j) {
          if (!key_mask[r0 + j]) {
            prow[j] = neg_inf;
            continue;
          }
          const T* k = src + (r0 + j) * stride + ko;
          T s = 0;
          for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
          prow[j] = s * inv_scale;
          mx = std::max(mx, prow[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < width; ++j) total += (prow[j] = key_mask[r0 + j] ? std::exp(prow[j] - mx) : T(0));
        for (std::size_t j = 0; j < width; ++j) prow[j] /= total;
        T* o = out.data() + (r0 + i) * dim + h * hd;
        for (std::size_t j = 0; j < width; ++j) {
          if (prow[j] == T(0)) continue;
          const T* v = src + (r0 + j) * stride + vo;
          for (std::size_t d = 0; d < hd; ++d) o[d] += prow[j] * v[d];
        }
      }
    }
  }
  return detail::make_result<T>(
      "masked_self_attention", {rows, dim}, std::move(out), {&qkv},
      [=](detail::Node<T>& node) {
        T* gq = detail::grad_of(node, 0);
        if (!gq) return;
        const T* x = node.inputs[0]->value.data();
        const T* g = node.grad.data();
        std::vector<T> dp(width);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t r0 = b * width;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs->data() + (b * heads + h) * width * width;
            const std::size_t qo = h * hd, ko = dim + h * hd, vo = 2 * dim + h * hd;
            for (std::size_t i = 0; i < width; ++i) {
              const T* go = g + (r0 + i) * dim + h * hd;
              const T* prow = P + i * width;
              T dot = 0;
              for (std::size_t j = 0; j < width; ++j) {
                if (prow[j] == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const T* v = x + (r0 + j) * stride + vo;
                T* gv = gq + (r0 + j) * stride + vo;
                T s = 0;
                for (std::size_t d = 0; d < hd; ++d) {
                  s += go[d] * v[d];
                  gv[d] += prow[j] * go[d];
                }
                dp[j] = s;
                dot += prow[j] * s;
              }
              const T* q = x + (r0 + i) * stride + qo;
              T* gqi = gq + (r0 + i) * stride + qo;
              for (std::size_t j = 0; j < width; ++j) {
                if (prow[j] == T(0)) continue;
                const T ds = prow[j] * (dp[j] - dot) * inv_scale;
                const T* k = x + (r0 + j) * stride + ko;
                T* gk = gq + (r0 + j) * stride + ko;
                for (std::size_t d = 0; d < hd; ++d) {
                  gqi[d] += ds * k[d];
                  gk[d] += ds * q[d];
                }
              }
            }
          }
        }
      });
}

}  // namespace ubert
