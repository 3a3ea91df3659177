#pragma once

// Dense kernels shared by every layer. All functions are pure; sizes are
// checked at the public entry points and assumed by the span-level helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "s7/errors.hpp"

namespace s7 {

template <typename T>
using Vec = std::vector<T>;

// Row-major dense matrix.
template <typename T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
      throw ShapeError("Mat: " + std::to_string(data.size()) + " values for shape " +
                       std::to_string(r) + "x" + std::to_string(c));
    }
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool empty() const { return data.empty(); }
  std::string shape_string() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

namespace kernel {

// out = M v
template <typename T>
void matvec(const Mat<T>& m, std::span<const T> v, std::span<T> out) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    const T* r = m.data.data() + i * m.cols;
    T acc = T(0);
    for (std::size_t j = 0; j < m.cols; ++j) acc += r[j] * v[j];
    out[i] = acc;
  }
}

// out += M^T v
template <typename T>
void matvec_transpose_add(const Mat<T>& m, std::span<const T> v, std::span<T> out) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    const T* r = m.data.data() + i * m.cols;
    const T vi = v[i];
    if (vi == T(0)) continue;
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += r[j] * vi;
  }
}

// G += a b^T
template <typename T>
void outer_add(Mat<T>& g, std::span<const T> a, std::span<const T> b) {
  for (std::size_t i = 0; i < g.rows; ++i) {
    T* r = g.data.data() + i * g.cols;
    const T ai = a[i];
    if (ai == T(0)) continue;
    for (std::size_t j = 0; j < g.cols; ++j) r[j] += ai * b[j];
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

// d/dx [x Phi(x)] = Phi(x) + x phi(x)
template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace kernel

template <typename T>
Vec<T> matvec(const Mat<T>& m, std::span<const T> v) {
  if (m.cols != v.size()) {
    throw ShapeError("matvec: matrix " + m.shape_string() + " times vector of length " +
                     std::to_string(v.size()));
  }
  Vec<T> out(m.rows);
  kernel::matvec(m, v, std::span<T>(out));
  return out;
}

template <typename T>
Vec<T> matvec(const Mat<T>& m, const Vec<T>& v) {
  return matvec(m, std::span<const T>(v));
}

template <typename T>
Vec<T> gelu(std::span<const T> v) {
  Vec<T> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](T x) { return kernel::gelu(x); });
  return out;
}

template <typename T>
Vec<T> sigmoid(std::span<const T> v) {
  Vec<T> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](T x) { return kernel::sigmoid(x); });
  return out;
}

template <typename T>
T mse_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse_loss: prediction length " + std::to_string(pred.size()) +
                     " vs target length " + std::to_string(target.size()));
  }
  if (pred.empty()) return T(0);
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T e = pred[i] - target[i];
    acc += e * e;
  }
  return acc / static_cast<T>(pred.size());
}

// -log softmax(logits)[class_index]; optional gradient softmax - onehot.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::size_t class_index, std::span<T> grad = {}) {
  if (class_index >= logits.size()) {
    throw ArgumentError("softmax_cross_entropy: class index " + std::to_string(class_index) +
                        " out of range for " + std::to_string(logits.size()) + " logits");
  }
  const T top = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T l : logits) sum += std::exp(l - top);
  const T log_sum = std::log(sum);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad[i] = std::exp(logits[i] - top - log_sum) - (i == class_index ? T(1) : T(0));
    }
  }
  return log_sum - (logits[class_index] - top);
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes u to zero mean / unit variance (no affine). Returns 1/std.
template <typename T>
T layer_norm(std::span<const T> u, std::span<T> normalized) {
  const std::size_t n = u.size();
  T mean = T(0);
  for (T x : u) mean += x;
  mean /= static_cast<T>(n);
  T var = T(0);
  for (T x : u) var += (x - mean) * (x - mean);
  var /= static_cast<T>(n);
  const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (std::size_t i = 0; i < n; ++i) normalized[i] = (u[i] - mean) * rstd;
  return rstd;
}

// du += d(normalized)/du^T * dnormalized
template <typename T>
void layer_norm_backward(std::span<const T> normalized, T rstd, std::span<const T> dnormalized,
                         std::span<T> du) {
  const std::size_t n = normalized.size();
  T mean_d = T(0);
  T mean_dn = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    mean_d += dnormalized[i];
    mean_dn += dnormalized[i] * normalized[i];
  }
  mean_d /= static_cast<T>(n);
  mean_dn /= static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    du[i] += rstd * (dnormalized[i] - mean_d - normalized[i] * mean_dn);
  }
}

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace s7
