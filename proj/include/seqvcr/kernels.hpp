#pragma once

// Numeric kernels behind the autodiff ops. Every kernel exists twice:
// `reference` is a plain serial loop nest kept as the test oracle, and
// `parallel` is the OpenMP version used for training. Parallel kernels split
// work on fixed boundaries, so their results do not depend on thread count.
//
// All matrices are dense row-major. Spans are checked against the stated
// extents.

#include <cstddef>
#include <span>

namespace seqvcr::kernels {

enum class Trans { No, Yes };

enum class Backend { Reference, Parallel };

/// Process-wide backend used by the dispatching functions below.
void set_backend(Backend b);
Backend backend();

/// Scoped backend override, restores the previous one on exit.
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : previous_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(previous_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend previous_;
};

#define SEQVCR_KERNEL_DECLS                                                                       \
  /* c[m×n] (+)= op(a) · op(b); op(a) is m×k, op(b) is k×n. */                                    \
  void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,                      \
            std::span<const double> a, std::span<const double> b, std::span<double> c,            \
            bool accumulate);                                                                     \
  void add_row_bias(std::span<double> y, std::span<const double> bias, std::size_t rows,          \
                    std::size_t cols);                                                            \
  /* db[cols] += sum over rows of dy */                                                           \
  void accumulate_column_sums(std::span<const double> dy, std::size_t rows, std::size_t cols,     \
                              std::span<double> db);                                              \
  void layer_norm_forward(std::span<const double> x, std::span<const double> gain,                \
                          std::span<const double> bias, std::size_t rows, std::size_t d,          \
                          double eps, std::span<double> y, std::span<double> mean,                \
                          std::span<double> rstd);                                                \
  /* accumulates into dx, dgain, dbias */                                                         \
  void layer_norm_backward(std::span<const double> dy, std::span<const double> x,                 \
                           std::span<const double> gain, std::span<const double> mean,            \
                           std::span<const double> rstd, std::size_t rows, std::size_t d,         \
                           std::span<double> dx, std::span<double> dgain,                         \
                           std::span<double> dbias);                                              \
  void gelu_forward(std::span<const double> x, std::span<double> y);                              \
  void gelu_backward(std::span<const double> x, std::span<const double> dy,                      \
                     std::span<double> dx);                                                       \
  /* softmax over contiguous groups of `inner` elements strided by `stride` */                    \
  void softmax_forward(std::span<const double> x, std::size_t outer, std::size_t axis_len,        \
                       std::size_t inner, std::span<double> y);                                   \
  void softmax_backward(std::span<const double> y, std::span<const double> dy,                   \
                        std::size_t outer, std::size_t axis_len, std::size_t inner,               \
                        std::span<double> dx);                                                    \
  /* qkv is [n_seq·T × 3·d_model], rows laid out [q | k | v]; probs is [n_seq·heads·T·T]. */      \
  void causal_attention_forward(std::span<const double> qkv, std::size_t n_seq, std::size_t T,    \
                                std::size_t heads, std::size_t d_model, std::span<double> out,   \
                                std::span<double> probs);                                         \
  void causal_attention_backward(std::span<const double> qkv, std::span<const double> probs,      \
                                 std::span<const double> dout, std::size_t n_seq, std::size_t T, \
                                 std::size_t heads, std::size_t d_model,                          \
                                 std::span<double> dqkv);                                         \
  /* Unbiased covariance of x[n×d] rows selected by mask over the sample axis,   */               \
  /* for each of `groups` groups: x is [n × groups × d], mask is [n × groups].   */               \
  /* Groups with fewer than two selected rows get zero covariance.               */               \
  void grouped_covariance(std::span<const double> x, std::span<const unsigned char> mask,         \
                          std::size_t n, std::size_t groups, std::size_t d,                       \
                          std::span<double> cov, std::span<double> mean,                          \
                          std::span<std::size_t> counts);                                         \
  /* dx += contribution of dcov through grouped_covariance */                                     \
  void grouped_covariance_backward(std::span<const double> x, std::span<const unsigned char> mask, \
                                   std::span<const double> mean,                                  \
                                   std::span<const std::size_t> counts,                           \
                                   std::span<const double> dcov, std::size_t n,                   \
                                   std::size_t groups, std::size_t d, std::span<double> dx);

namespace reference {
SEQVCR_KERNEL_DECLS
}
namespace parallel {
SEQVCR_KERNEL_DECLS
}
// Dispatching versions, routed through backend().
SEQVCR_KERNEL_DECLS

#undef SEQVCR_KERNEL_DECLS

}  // namespace seqvcr::kernels
