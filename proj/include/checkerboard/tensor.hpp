#pragma once

// Minimal dense f64 tensor and the few kernels the transformer needs.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace checkerboard {

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool decay = false;  // subject to decoupled weight decay

  Tensor() = default;
  Tensor(std::string n, std::vector<std::size_t> s, bool wd = false)
      : name(std::move(n)), shape(std::move(s)), decay(wd) {
    data.assign(numel(), 0.0);
  }

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : numel() / shape[0]; }

  double* row(std::size_t r) { return data.data() + r * cols(); }
  const double* row(std::size_t r) const { return data.data() + r * cols(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y[out] = W[out, in] x[in] (+ b)
inline void matvec(const Tensor& w, const double* bias, const double* x, double* y) {
  const std::size_t out = w.rows(), in = w.cols();
  for (std::size_t o = 0; o < out; ++o) y[o] = (bias ? bias[o] : 0.0) + dot(w.row(o), x, in);
}

// Backward of matvec: dx += W^T dy, dW += dy x^T, db += dy.
inline void matvec_backward(const Tensor& w, const double* x, const double* dy, double* dx, Tensor& dw, double* db) {
  const std::size_t out = w.rows(), in = w.cols();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    if (dx) axpy(g, w.row(o), dx, in);
    axpy(g, x, dw.row(o), in);
    if (db) db[o] += g;
  }
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double gelu(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// In-place numerically stable softmax; returns log-sum-exp.
inline double softmax_inplace(double* z, std::size_t n) {
  double m = z[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, z[i]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = std::exp(z[i] - m);
    s += z[i];
  }
  for (std::size_t i = 0; i < n; ++i) z[i] /= s;
  return m + std::log(s);
}

}  // namespace checkerboard
