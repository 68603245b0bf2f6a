#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <vector>

#include "kernels_common.hpp"
#include "seqvcr/kernels.hpp"

namespace seqvcr::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Rows of C per task. Fixed so that the blocking Eigen picks for a row does
// not depend on how many threads run.
constexpr std::size_t kGemmRowBlock = 64;

template <typename OpA, typename OpB>
void eigen_block(const OpA& a_block, const OpB& b, MutMap c_block, bool accumulate) {
  if (accumulate) {
    c_block.noalias() += a_block * b;
  } else {
    c_block.noalias() = a_block * b;
  }
}

template <typename OpB>
void gemm_rows(Trans ta, std::size_t m, std::size_t k, std::size_t n, const double* a, const OpB& b, double* c,
               bool accumulate) {
  const auto blocks = static_cast<std::ptrdiff_t>((m + kGemmRowBlock - 1) / kGemmRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kGemmRowBlock;
    const std::size_t rows = std::min(kGemmRowBlock, m - r0);
    MutMap c_block(c + r0 * n, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    if (ta == Trans::No) {
      ConstMap a_block(a + r0 * k, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
      eigen_block(a_block, b, c_block, accumulate);
    } else {
      ConstMap a_full(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
      eigen_block(a_full.middleCols(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(rows)).transpose(), b,
                  c_block, accumulate);
    }
  }
}

std::atomic<Backend> g_backend{Backend::Parallel};

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace parallel {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  detail::check_gemm(m, n, k, a, b, c);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
    return;
  }
  if (tb == Trans::No) {
    ConstMap bm(b.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    gemm_rows(ta, m, k, n, a.data(), bm, c.data(), accumulate);
  } else {
    ConstMap bm(b.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    gemm_rows(ta, m, k, n, a.data(), bm.transpose(), c.data(), accumulate);
  }
}

void add_row_bias(std::span<double> y, std::span<const double> bias, std::size_t rows, std::size_t cols) {
  detail::check_size(y, rows * cols, "add_row_bias y");
  detail::check_size(bias, cols, "add_row_bias bias");
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    double* yr = &y[static_cast<std::size_t>(r) * cols];
    for (std::size_t c = 0; c < cols; ++c) yr[c] += bias[c];
  }
}

void accumulate_column_sums(std::span<const double> dy, std::size_t rows, std::size_t cols, std::span<double> db) {
  detail::check_size(dy, rows * cols, "column sums dy");
  detail::check_size(db, cols, "column sums db");
  // Column-parallel so each output keeps the serial row order.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cols); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += dy[r * cols + static_cast<std::size_t>(c)];
    db[static_cast<std::size_t>(c)] += s;
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                        std::size_t rows, std::size_t d, double eps, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const auto ru = static_cast<std::size_t>(r);
    detail::layer_norm_row(&x[ru * d], gain.data(), bias.data(), d, eps, &y[ru * d], mean[ru], rstd[ru]);
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd, std::size_t rows,
                         std::size_t d, std::span<double> dx, std::span<double> dgain, std::span<double> dbias) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const auto ru = static_cast<std::size_t>(r);
    detail::layer_norm_row_backward(&dy[ru * d], &x[ru * d], gain.data(), mean[ru], rstd[ru], d, &dx[ru * d]);
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(d); ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    double sg = 0.0;
    double sb = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xhat = (x[r * d + j] - mean[r]) * rstd[r];
      sg += dy[r * d + j] * xhat;
      sb += dy[r * d + j];
    }
    dgain[j] += sg;
    dbias[j] += sb;
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.size()); ++i)
    y[static_cast<std::size_t>(i)] = detail::gelu(x[static_cast<std::size_t>(i)]);
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.size()); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    dx[iu] += dy[iu] * detail::gelu_grad(x[iu]);
  }
}

void softmax_forward(std::span<const double> x, std::size_t outer, std::size_t axis_len, std::size_t inner,
                     std::span<double> y) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oi = 0; oi < static_cast<std::ptrdiff_t>(outer * inner); ++oi) {
    const std::size_t o = static_cast<std::size_t>(oi) / inner;
    const std::size_t i = static_cast<std::size_t>(oi) % inner;
    detail::softmax_strided(&x[o * axis_len * inner + i], axis_len, inner, &y[o * axis_len * inner + i]);
  }
}

void softmax_backward(std::span<const double> y, std::span<const double> dy, std::size_t outer,
                      std::size_t axis_len, std::size_t inner, std::span<double> dx) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oi = 0; oi < static_cast<std::ptrdiff_t>(outer * inner); ++oi) {
    const std::size_t base = (static_cast<std::size_t>(oi) / inner) * axis_len * inner +
                             static_cast<std::size_t>(oi) % inner;
    double dot = 0.0;
    for (std::size_t a = 0; a < axis_len; ++a) dot += y[base + a * inner] * dy[base + a * inner];
    for (std::size_t a = 0; a < axis_len; ++a) {
      const std::size_t at = base + a * inner;
      dx[at] += y[at] * (dy[at] - dot);
    }
  }
}

void causal_attention_forward(std::span<const double> qkv, std::size_t n_seq, std::size_t T, std::size_t heads,
                              std::size_t d_model, std::span<double> out, std::span<double> probs) {
  detail::check_attention(qkv, n_seq, T, heads, d_model);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sh = 0; sh < static_cast<std::ptrdiff_t>(n_seq * heads); ++sh) {
    const auto s = static_cast<std::size_t>(sh) / heads;
    const auto h = static_cast<std::size_t>(sh) % heads;
    detail::attention_head_forward(qkv, s, h, T, heads, d_model, out, probs);
  }
}

void causal_attention_backward(std::span<const double> qkv, std::span<const double> probs,
                               std::span<const double> dout, std::size_t n_seq, std::size_t T, std::size_t heads,
                               std::size_t d_model, std::span<double> dqkv) {
  detail::check_attention(qkv, n_seq, T, heads, d_model);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t sh = 0; sh < static_cast<std::ptrdiff_t>(n_seq * heads); ++sh) {
    const auto s = static_cast<std::size_t>(sh) / heads;
    const auto h = static_cast<std::size_t>(sh) % heads;
    detail::attention_head_backward(qkv, probs, dout, s, h, T, heads, d_model, dqkv);
  }
}

void grouped_covariance(std::span<const double> x, std::span<const unsigned char> mask, std::size_t n,
                        std::size_t groups, std::size_t d, std::span<double> cov, std::span<double> mean,
                        std::span<std::size_t> counts) {
  detail::check_covariance(x, mask, n, groups, d, cov.size(), mean.size(), counts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(groups); ++gi) {
    const auto g = static_cast<std::size_t>(gi);
    std::size_t cnt = 0;
    double* mu = &mean[g * d];
    std::fill(mu, mu + d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      ++cnt;
      const double* xr = &x[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k) mu[k] += xr[k];
    }
    counts[g] = cnt;
    if (cnt > 0)
      for (std::size_t k = 0; k < d; ++k) mu[k] /= static_cast<double>(cnt);
    MutMap cg(&cov[g * d * d], static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    if (cnt < 2) {
      cg.setZero();
      continue;
    }
    RowMat centered(static_cast<Eigen::Index>(cnt), static_cast<Eigen::Index>(d));
    Eigen::Index row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      const double* xr = &x[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k) centered(row, static_cast<Eigen::Index>(k)) = xr[k] - mu[k];
      ++row;
    }
    cg.noalias() = centered.transpose() * centered;
    cg *= 1.0 / static_cast<double>(cnt - 1);
  }
}

void grouped_covariance_backward(std::span<const double> x, std::span<const unsigned char> mask,
                                 std::span<const double> mean, std::span<const std::size_t> counts,
                                 std::span<const double> dcov, std::size_t n, std::size_t groups, std::size_t d,
                                 std::span<double> dx) {
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t gi = 0; gi < static_cast<std::ptrdiff_t>(groups); ++gi) {
    const auto g = static_cast<std::size_t>(gi);
    if (counts[g] < 2) continue;
    const auto cnt = static_cast<Eigen::Index>(counts[g]);
    const auto de = static_cast<Eigen::Index>(d);
    ConstMap dc(&dcov[g * d * d], de, de);
    const RowMat sym = (dc + dc.transpose()) * (1.0 / static_cast<double>(counts[g] - 1));
    RowMat centered(cnt, de);
    Eigen::Index row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      const double* xr = &x[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k) centered(row, static_cast<Eigen::Index>(k)) = xr[k] - mean[g * d + k];
      ++row;
    }
    const RowMat grad = centered * sym;
    row = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j * groups + g]) continue;
      double* dxr = &dx[(j * groups + g) * d];
      for (std::size_t k = 0; k < d; ++k) dxr[k] += grad(row, static_cast<Eigen::Index>(k));
      ++row;
    }
  }
}

}  // namespace parallel

// Dispatch.

#define SEQVCR_DISPATCH(name, ...)                  \
  if (backend() == Backend::Reference) {            \
    reference::name(__VA_ARGS__);                   \
  } else {                                          \
    parallel::name(__VA_ARGS__);                    \
  }

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  SEQVCR_DISPATCH(gemm, ta, tb, m, n, k, a, b, c, accumulate)
}
void add_row_bias(std::span<double> y, std::span<const double> bias, std::size_t rows, std::size_t cols) {
  SEQVCR_DISPATCH(add_row_bias, y, bias, rows, cols)
}
void accumulate_column_sums(std::span<const double> dy, std::size_t rows, std::size_t cols, std::span<double> db) {
  SEQVCR_DISPATCH(accumulate_column_sums, dy, rows, cols, db)
}
void layer_norm_forward(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                        std::size_t rows, std::size_t d, double eps, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd) {
  SEQVCR_DISPATCH(layer_norm_forward, x, gain, bias, rows, d, eps, y, mean, rstd)
}
void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd, std::size_t rows,
                         std::size_t d, std::span<double> dx, std::span<double> dgain, std::span<double> dbias) {
  SEQVCR_DISPATCH(layer_norm_backward, dy, x, gain, mean, rstd, rows, d, dx, dgain, dbias)
}
void gelu_forward(std::span<const double> x, std::span<double> y) { SEQVCR_DISPATCH(gelu_forward, x, y) }
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  SEQVCR_DISPATCH(gelu_backward, x, dy, dx)
}
void softmax_forward(std::span<const double> x, std::size_t outer, std::size_t axis_len, std::size_t inner,
                     std::span<double> y) {
  SEQVCR_DISPATCH(softmax_forward, x, outer, axis_len, inner, y)
}
void softmax_backward(std::span<const double> y, std::span<const double> dy, std::size_t outer,
                      std::size_t axis_len, std::size_t inner, std::span<double> dx) {
  SEQVCR_DISPATCH(softmax_backward, y, dy, outer, axis_len, inner, dx)
}
void causal_attention_forward(std::span<const double> qkv, std::size_t n_seq, std::size_t T, std::size_t heads,
                              std::size_t d_model, std::span<double> out, std::span<double> probs) {
  SEQVCR_DISPATCH(causal_attention_forward, qkv, n_seq, T, heads, d_model, out, probs)
}
void causal_attention_backward(std::span<const double> qkv, std::span<const double> probs,
                               std::span<const double> dout, std::size_t n_seq, std::size_t T, std::size_t heads,
                               std::size_t d_model, std::span<double> dqkv) {
  SEQVCR_DISPATCH(causal_attention_backward, qkv, probs, dout, n_seq, T, heads, d_model, dqkv)
}
void grouped_covariance(std::span<const double> x, std::span<const unsigned char> mask, std::size_t n,
                        std::size_t groups, std::size_t d, std::span<double> cov, std::span<double> mean,
                        std::span<std::size_t> counts) {
  SEQVCR_DISPATCH(grouped_covariance, x, mask, n, groups, d, cov, mean, counts)
}
void grouped_covariance_backward(std::span<const double> x, std::span<const unsigned char> mask,
                                 std::span<const double> mean, std::span<const std::size_t> counts,
                                 std::span<const double> dcov, std::size_t n, std::size_t groups, std::size_t d,
                                 std::span<double> dx) {
  SEQVCR_DISPATCH(grouped_covariance_backward, x, mask, mean, counts, dcov, n, groups, d, dx)
}

#undef SEQVCR_DISPATCH

}  // namespace seqvcr::kernels
