#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "kernels_common.hpp"
#include "seqvcr/kernels.hpp"

namespace seqvcr::kernels::reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  detail::check_gemm(m, n, k, a, b, c);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void add_row_bias(std::span<double> y, std::span<const double> bias, std::size_t rows, std::size_t cols) {
  detail::check_size(y, rows * cols, "add_row_bias y");
  detail::check_size(bias, cols, "add_row_bias bias");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias[c];
}

void accumulate_column_sums(std::span<const double> dy, std::size_t rows, std::size_t cols,
                            std::span<double> db) {
  detail::check_size(dy, rows * cols, "column sums dy");
  detail::check_size(db, cols, "column sums db");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                        std::size_t rows, std::size_t d, double eps, std::span<double> y,
                        std::span<double> mean, std::span<double> rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    detail::layer_norm_row(&x[r * d], gain.data(), bias.data(), d, eps, &y[r * d], mean[r], rstd[r]);
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd, std::size_t rows,
                         std::size_t d, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias) {
  for (std::size_t r = 0; r < rows; ++r) {
    detail::layer_norm_row_backward(&dy[r * d], &x[r * d], gain.data(), mean[r], rstd[r], d, &dx[r * d]);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (x[r * d + j] - mean[r]) * rstd[r];
      dgain[j] += dy[r * d + j] * xhat;
      dbias[j] += dy[r * d + j];
    }
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = detail::gelu(x[i]);
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * detail::gelu_grad(x[i]);
}

void softmax_forward(std::span<const double> x, std::size_t outer, std::size_t axis_len, std::size_t inner,
                     std::span<double> y) {
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      detail::softmax_strided(&x[o * axis_len * inner + i], axis_len, inner, &y[o * axis_len * inner + i]);
}

void softmax_backward(std::span<const double> y, std::span<const double> dy, std::size_t outer,
                      std::size_t axis_len, std::size_t inner, std::span<double> dx) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * axis_len * inner + i;
      double dot = 0.0;
      for (std::size_t a = 0; a < axis_len; ++a) dot += y[base + a * inner] * dy[base + a * inner];
      for (std::size_t a = 0; a < axis_len; ++a) {
        const std::size_t at = base + a * inner;
        dx[at] += y[at] * (dy[at] - dot);
      }
    }
  }
}

void causal_attention_forward(std::span<const double> qkv, std::size_t n_seq, std::size_t T, std::size_t heads,
                              std::size_t d_model, std::span<double> out, std::span<double> probs) {
  detail::check_attention(qkv, n_seq, T, heads, d_model);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t h = 0; h < heads; ++h) detail::attention_head_forward(qkv, s, h, T, heads, d_model, out, probs);
}

void causal_attention_backward(std::span<const double> qkv, std::span<const double> probs,
                               std::span<const double> dout, std::size_t n_seq, std::size_t T,
                               std::size_t heads, std::size_t d_model, std::span<double> dqkv) {
  detail::check_attention(qkv, n_seq, T, heads, d_model);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t h = 0; h < heads; ++h)
      detail::attention_head_backward(qkv, probs, dout, s, h, T, heads, d_model, dqkv);
}

void grouped_covariance(std::span<const double> x, std::span<const unsigned char> mask, std::size_t n,
                        std::size_t groups, std::size_t d, std::span<double> cov, std::span<double> mean,
                        std::span<std::size_t> counts) {
  detail::check_covariance(x, mask, n, groups, d, cov.size(), mean.size(), counts.size());
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t cnt = 0;
    std::vector<double> mu(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      ++cnt;
      for (std::size_t k = 0; k < d; ++k) mu[k] += x[(j * groups + g) * d + k];
    }
    counts[g] = cnt;
    if (cnt > 0)
      for (auto& v : mu) v /= static_cast<double>(cnt);
    std::copy(mu.begin(), mu.end(), mean.begin() + static_cast<std::ptrdiff_t>(g * d));
    double* cg = &cov[g * d * d];
    std::fill(cg, cg + d * d, 0.0);
    if (cnt < 2) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      const double* xr = &x[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) cg[k * d + l] += (xr[k] - mu[k]) * (xr[l] - mu[l]);
    }
    const double inv = 1.0 / static_cast<double>(cnt - 1);
    for (std::size_t i = 0; i < d * d; ++i) cg[i] *= inv;
  }
}

void grouped_covariance_backward(std::span<const double> x, std::span<const unsigned char> mask,
                                 std::span<const double> mean, std::span<const std::size_t> counts,
                                 std::span<const double> dcov, std::size_t n, std::size_t groups, std::size_t d,
                                 std::span<double> dx) {
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] < 2) continue;
    const double inv = 1.0 / static_cast<double>(counts[g] - 1);
    const double* dc = &dcov[g * d * d];
    const double* mu = &mean[g * d];
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      const double* xr = &x[(j * groups + g) * d];
      double* dxr = &dx[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t l = 0; l < d; ++l) s += (dc[k * d + l] + dc[l * d + k]) * (xr[l] - mu[l]);
        dxr[k] += s * inv;
      }
    }
  }
}

}  // namespace seqvcr::kernels::reference
