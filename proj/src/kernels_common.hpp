#pragma once

// Per-row and per-head building blocks shared by the reference and parallel
// kernels. Each function touches only its own slice of the outputs.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>
#include <algorithm>

namespace seqvcr::kernels::detail {

template <typename T>
inline void check_size(std::span<T> s, std::size_t want, const char* what) {
  if (s.size() != want) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(want) + " elements, got " +
                                std::to_string(s.size()));
  }
}

inline void check_gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                       std::span<const double> b, std::span<double> c) {
  check_size(a, m * k, "gemm a");
  check_size(b, k * n, "gemm b");
  check_size(c, m * n, "gemm c");
}

inline void check_attention(std::span<const double> qkv, std::size_t n_seq, std::size_t T, std::size_t heads,
                            std::size_t d_model) {
  if (heads == 0 || d_model % heads != 0) throw std::invalid_argument("attention: d_model not divisible by heads");
  check_size(qkv, n_seq * T * 3 * d_model, "attention qkv");
}

inline void check_covariance(std::span<const double> x, std::span<const unsigned char> mask, std::size_t n,
                             std::size_t groups, std::size_t d, std::size_t cov, std::size_t mean,
                             std::size_t counts) {
  check_size(x, n * groups * d, "covariance x");
  check_size(mask, n * groups, "covariance mask");
  if (cov != groups * d * d || mean != groups * d || counts != groups)
    throw std::invalid_argument("covariance: output buffers have wrong size");
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

inline void layer_norm_row(const double* x, const double* gain, const double* bias, std::size_t d, double eps,
                           double* y, double& mean_out, double& rstd_out) {
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + eps);
  for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  mean_out = mean;
  rstd_out = rstd;
}

// dx += d(LN)/dx · dy, gain/bias gradients handled by the caller.
inline void layer_norm_row_backward(const double* dy, const double* x, const double* gain, double mean,
                                    double rstd, std::size_t d, double* dx) {
  double sum_g = 0.0;
  double sum_gx = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double g = dy[j] * gain[j];
    sum_g += g;
    sum_gx += g * (x[j] - mean) * rstd;
  }
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double xhat = (x[j] - mean) * rstd;
    dx[j] += rstd * (dy[j] * gain[j] - sum_g * inv_d - xhat * sum_gx * inv_d);
  }
}

inline void softmax_strided(const double* x, std::size_t len, std::size_t stride, double* y) {
  double mx = x[0];
  for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, x[a * stride]);
  double sum = 0.0;
  for (std::size_t a = 0; a < len; ++a) {
    y[a * stride] = std::exp(x[a * stride] - mx);
    sum += y[a * stride];
  }
  const double inv = 1.0 / sum;
  for (std::size_t a = 0; a < len; ++a) y[a * stride] *= inv;
}

inline void attention_head_forward(std::span<const double> qkv, std::size_t s, std::size_t h, std::size_t T,
                                   std::size_t heads, std::size_t d_model, std::span<double> out,
                                   std::span<double> probs) {
  const std::size_t hd = d_model / heads;
  const std::size_t row_stride = 3 * d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* base = &qkv[s * T * row_stride];
  double* p = &probs[((s * heads) + h) * T * T];
  for (std::size_t t = 0; t < T; ++t) {
    const double* q = base + t * row_stride + h * hd;
    double mx = -INFINITY;
    for (std::size_t u = 0; u <= t; ++u) {
      const double* k = base + u * row_stride + d_model + h * hd;
      double dot = 0.0;
      for (std::size_t j = 0; j < hd; ++j) dot += q[j] * k[j];
      p[t * T + u] = dot * scale;
      mx = std::max(mx, p[t * T + u]);
    }
    double sum = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      p[t * T + u] = std::exp(p[t * T + u] - mx);
      sum += p[t * T + u];
    }
    for (std::size_t u = 0; u <= t; ++u) p[t * T + u] /= sum;
    for (std::size_t u = t + 1; u < T; ++u) p[t * T + u] = 0.0;
    double* o = &out[(s * T + t) * d_model + h * hd];
    for (std::size_t j = 0; j < hd; ++j) o[j] = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      const double* v = base + u * row_stride + 2 * d_model + h * hd;
      const double w = p[t * T + u];
      for (std::size_t j = 0; j < hd; ++j) o[j] += w * v[j];
    }
  }
}

inline void attention_head_backward(std::span<const double> qkv, std::span<const double> probs,
                                    std::span<const double> dout, std::size_t s, std::size_t h, std::size_t T,
                                    std::size_t heads, std::size_t d_model, std::span<double> dqkv) {
  const std::size_t hd = d_model / heads;
  const std::size_t row_stride = 3 * d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* base = &qkv[s * T * row_stride];
  double* dbase = &dqkv[s * T * row_stride];
  const double* p = &probs[((s * heads) + h) * T * T];
  std::vector<double> ds(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dout_t = &dout[(s * T + t) * d_model + h * hd];
    double dot = 0.0;
    for (std::size_t u = 0; u <= t; ++u) {
      const double* v = base + u * row_stride + 2 * d_model + h * hd;
      double dp = 0.0;
      for (std::size_t j = 0; j < hd; ++j) dp += dout_t[j] * v[j];
      ds[u] = dp;
      dot += p[t * T + u] * dp;
    }
    const double* q = base + t * row_stride + h * hd;
    double* dq = dbase + t * row_stride + h * hd;
    for (std::size_t u = 0; u <= t; ++u) {
      const double pu = p[t * T + u];
      const double dsu = pu * (ds[u] - dot) * scale;
      const double* k = base + u * row_stride + d_model + h * hd;
      double* dk = dbase + u * row_stride + d_model + h * hd;
      double* dv = dbase + u * row_stride + 2 * d_model + h * hd;
      for (std::size_t j = 0; j < hd; ++j) {
        dq[j] += dsu * k[j];
        dk[j] += dsu * q[j];
        dv[j] += pu * dout_t[j];
      }
    }
  }
}

}  // namespace seqvcr::kernels::detail
