#include <gtest/gtest.h>

#include <vector>

#include "seqvcr/kernels.hpp"
#include "seqvcr/rng.hpp"

namespace seqvcr::kernels {
namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

TEST(Kernels, GemmAllTransposesAgree) {
  const std::size_t m = 37, n = 29, k = 41;
  const auto a = randn(m * k, 1), b = randn(k * n, 2);
  for (Trans ta : {Trans::No, Trans::Yes}) {
    for (Trans tb : {Trans::No, Trans::Yes}) {
      for (bool acc : {false, true}) {
        std::vector<double> c_ref = randn(m * n, 3), c_par = c_ref;
        reference::gemm(ta, tb, m, n, k, a, b, c_ref, acc);
        parallel::gemm(ta, tb, m, n, k, a, b, c_par, acc);
        expect_close(c_ref, c_par, 1e-12);
      }
    }
  }
}

TEST(Kernels, GemmSmallHandValue) {
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4);
  reference::gemm(Trans::No, Trans::No, 2, 2, 2, a, b, c, false);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
  reference::gemm(Trans::Yes, Trans::No, 2, 2, 2, a, b, c, false);
  EXPECT_EQ(c, (std::vector<double>{26, 30, 38, 44}));
}

TEST(Kernels, LayerNormForwardBackwardAgree) {
  const std::size_t rows = 19, d = 24;
  const auto x = randn(rows * d, 4), gain = randn(d, 5), bias = randn(d, 6), dy = randn(rows * d, 7);
  std::vector<double> y1(rows * d), y2(rows * d), m1(rows), m2(rows), r1(rows), r2(rows);
  reference::layer_norm_forward(x, gain, bias, rows, d, 1e-5, y1, m1, r1);
  parallel::layer_norm_forward(x, gain, bias, rows, d, 1e-5, y2, m2, r2);
  expect_close(y1, y2, 1e-13);
  std::vector<double> dx1(rows * d), dx2(rows * d), dg1(d), dg2(d), db1(d), db2(d);
  reference::layer_norm_backward(dy, x, gain, m1, r1, rows, d, dx1, dg1, db1);
  parallel::layer_norm_backward(dy, x, gain, m2, r2, rows, d, dx2, dg2, db2);
  expect_close(dx1, dx2, 1e-12);
  expect_close(dg1, dg2, 1e-12);
  expect_close(db1, db2, 1e-12);
}

TEST(Kernels, GeluAndSoftmaxAgree) {
  const auto x = randn(5 * 6 * 7, 8), dy = randn(5 * 6 * 7, 9);
  std::vector<double> g1(x.size()), g2(x.size()), dg1(x.size()), dg2(x.size());
  reference::gelu_forward(x, g1);
  parallel::gelu_forward(x, g2);
  expect_close(g1, g2, 1e-15);
  reference::gelu_backward(x, dy, dg1);
  parallel::gelu_backward(x, dy, dg2);
  expect_close(dg1, dg2, 1e-15);

  std::vector<double> s1(x.size()), s2(x.size()), ds1(x.size()), ds2(x.size());
  reference::softmax_forward(x, 5, 6, 7, s1);
  parallel::softmax_forward(x, 5, 6, 7, s2);
  expect_close(s1, s2, 1e-15);
  reference::softmax_backward(s1, dy, 5, 6, 7, ds1);
  parallel::softmax_backward(s2, dy, 5, 6, 7, ds2);
  expect_close(ds1, ds2, 1e-14);
}

TEST(Kernels, AttentionAgrees) {
  const std::size_t n_seq = 3, T = 7, heads = 4, d = 16;
  const auto qkv = randn(n_seq * T * 3 * d, 10), dout = randn(n_seq * T * d, 11);
  std::vector<double> o1(n_seq * T * d), o2(o1.size()), p1(n_seq * heads * T * T), p2(p1.size());
  reference::causal_attention_forward(qkv, n_seq, T, heads, d, o1, p1);
  parallel::causal_attention_forward(qkv, n_seq, T, heads, d, o2, p2);
  expect_close(o1, o2, 1e-13);
  expect_close(p1, p2, 1e-14);
  std::vector<double> g1(qkv.size()), g2(qkv.size());
  reference::causal_attention_backward(qkv, p1, dout, n_seq, T, heads, d, g1);
  parallel::causal_attention_backward(qkv, p2, dout, n_seq, T, heads, d, g2);
  expect_close(g1, g2, 1e-12);
}

TEST(Kernels, AttentionProbabilitiesAreCausal) {
  const std::size_t T = 5, heads = 2, d = 4;
  const auto qkv = randn(T * 3 * d, 12);
  std::vector<double> out(T * d), probs(heads * T * T);
  reference::causal_attention_forward(qkv, 1, T, heads, d, out, probs);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < T; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        const double p = probs[(h * T + i) * T + j];
        if (j > i) EXPECT_EQ(p, 0.0);
        row += p;
      }
      EXPECT_NEAR(row, 1.0, 1e-14);
    }
  }
}

TEST(Kernels, GroupedCovarianceAgreesWithMask) {
  const std::size_t n = 11, groups = 5, d = 6;
  const auto x = randn(n * groups * d, 13), dcov = randn(groups * d * d, 14);
  std::vector<unsigned char> mask(n * groups, 1);
  Rng rng(15);
  for (auto& m : mask) m = rng.uniform() < 0.8;
  for (std::size_t i = 0; i < n; ++i) mask[i * groups + 4] = i == 3;  // one sample only
  std::vector<double> c1(groups * d * d), c2(c1.size()), m1(groups * d), m2(m1.size());
  std::vector<std::size_t> n1(groups), n2(groups);
  reference::grouped_covariance(x, mask, n, groups, d, c1, m1, n1);
  parallel::grouped_covariance(x, mask, n, groups, d, c2, m2, n2);
  expect_close(c1, c2, 1e-13);
  EXPECT_EQ(n1, n2);
  EXPECT_EQ(n1[4], 1u);
  for (std::size_t i = 0; i < d * d; ++i) EXPECT_EQ(c1[4 * d * d + i], 0.0);
  std::vector<double> dx1(x.size()), dx2(x.size());
  reference::grouped_covariance_backward(x, mask, m1, n1, dcov, n, groups, d, dx1);
  parallel::grouped_covariance_backward(x, mask, m2, n2, dcov, n, groups, d, dx2);
  expect_close(dx1, dx2, 1e-12);
}

TEST(Kernels, BiasAndColumnSumsAgree) {
  const std::size_t rows = 13, cols = 9;
  const auto bias = randn(cols, 16), dy = randn(rows * cols, 17);
  std::vector<double> y1 = randn(rows * cols, 18), y2 = y1;
  reference::add_row_bias(y1, bias, rows, cols);
  parallel::add_row_bias(y2, bias, rows, cols);
  expect_close(y1, y2, 0.0);
  std::vector<double> s1(cols, 1.0), s2(cols, 1.0);
  reference::accumulate_column_sums(dy, rows, cols, s1);
  parallel::accumulate_column_sums(dy, rows, cols, s2);
  expect_close(s1, s2, 1e-14);
}

TEST(Kernels, BackendGuardRestores) {
  const Backend before = backend();
  {
    BackendGuard g(Backend::Reference);
    EXPECT_EQ(backend(), Backend::Reference);
  }
  EXPECT_EQ(backend(), before);
}

TEST(Kernels, SpanExtentsAreChecked) {
  std::vector<double> a(4), b(4), c(3);
  EXPECT_THROW(reference::gemm(Trans::No, Trans::No, 2, 2, 2, a, b, c, false), std::invalid_argument);
  EXPECT_THROW(parallel::gemm(Trans::No, Trans::No, 2, 2, 2, a, b, c, false), std::invalid_argument);
}

}  // namespace
}  // namespace seqvcr::kernels
