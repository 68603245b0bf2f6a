#include "seqvcr/seqvcr_loss.hpp"

#include <cmath>
#include <stdexcept>

#include "seqvcr/kernels.hpp"

namespace seqvcr {

std::string to_string(CovMode m) { return m == CovMode::PerPositionBatch ? "batch" : "batch_length"; }

CovMode cov_mode_from_string(const std::string& s) {
  if (s == "batch") return CovMode::PerPositionBatch;
  if (s == "batch_length") return CovMode::BatchPlusLength;
  throw std::invalid_argument("unknown cov_mode '" + s + "' (expected batch or batch_length)");
}

void RegConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("regularization coefficients must be nonnegative");
}

std::size_t CovarianceStats::usable_groups() const {
  std::size_t n = 0;
  for (auto c : counts) n += c >= 2;
  return n;
}

namespace {

CovarianceStats grouped(ad::Tape& tape, ad::Var x, std::size_t n, std::size_t groups, std::size_t d,
                        std::vector<unsigned char> mask) {
  CovarianceStats st;
  st.groups = groups;
  st.dim = d;
  st.mean = Tensor(Shape{groups, d});
  st.counts.assign(groups, 0);
  Tensor cov(Shape{groups, d, d});
  kernels::grouped_covariance(tape.value(x).values(), mask, n, groups, d, cov.values(), st.mean.values(), st.counts);
  st.cov = tape.push(std::move(cov), {x},
                     [x, n, groups, d, mask = std::move(mask), mean = st.mean, counts = st.counts](
                         ad::Tape& tp, std::span<const double> g) {
                       kernels::grouped_covariance_backward(tp.value(x).values(), mask, mean.values(), counts, g, n,
                                                            groups, d, tp.grad_buffer(x));
                     });
  return st;
}

std::vector<unsigned char> mask_or_all(std::span<const unsigned char> mask, std::size_t size) {
  if (mask.empty()) return std::vector<unsigned char>(size, 1);
  if (mask.size() != size) {
    throw std::invalid_argument("covariance mask has " + std::to_string(mask.size()) + " entries, expected " +
                                std::to_string(size));
  }
  return {mask.begin(), mask.end()};
}

}  // namespace

CovarianceStats per_position_covariance(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 3) throw std::invalid_argument("covariance input must be [N × T × d], got " + shape_string(xv.shape()));
  const std::size_t n = xv.dim(0), t = xv.dim(1), d = xv.dim(2);
  if (n < 2) throw std::invalid_argument("per-position covariance needs at least 2 samples, got " + std::to_string(n));
  return grouped(tape, x, n, t, d, mask_or_all(mask, n * t));
}

CovarianceStats batch_length_covariance(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 3) throw std::invalid_argument("covariance input must be [N × T × d], got " + shape_string(xv.shape()));
  const std::size_t rows = xv.dim(0) * xv.dim(1), d = xv.dim(2);
  if (rows < 2) throw std::invalid_argument("pooled covariance needs at least 2 rows, got " + std::to_string(rows));
  return grouped(tape, x, rows, 1, d, mask_or_all(mask, rows));
}

ad::Var seq_vcr_loss(ad::Tape& tape, const CovarianceStats& stats, const RegConfig& cfg) {
  cfg.validate();
  const std::size_t d = stats.dim;
  const std::size_t used = stats.usable_groups();
  const auto cov = tape.value(stats.cov).values();
  if (used == 0) return tape.constant(Tensor::scalar(0.0));
  const double norm = 1.0 / (static_cast<double>(used) * static_cast<double>(d));
  double total = 0.0;
  for (std::size_t g = 0; g < stats.groups; ++g) {
    if (stats.counts[g] < 2) continue;
    const double* c = &cov[g * d * d];
    double var_term = 0.0;
    double cov_term = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      var_term += std::max(0.0, 1.0 - std::sqrt(c[k * d + k] + cfg.eta));
      for (std::size_t j = 0; j < d; ++j) {
        if (j != k) cov_term += c[k * d + j] * c[k * d + j];
      }
    }
    total += cfg.lambda1 * var_term + cfg.lambda2 * cov_term;
  }
  total *= norm;
  return tape.push(Tensor::scalar(total), {stats.cov},
                   [cv = stats.cov, counts = stats.counts, groups = stats.groups, d, norm, cfg](
                       ad::Tape& tp, std::span<const double> g) {
                     const auto c = tp.value(cv).values();
                     auto dc = tp.grad_buffer(cv);
                     const double s = g[0] * norm;
                     for (std::size_t grp = 0; grp < groups; ++grp) {
                       if (counts[grp] < 2) continue;
                       const std::size_t base = grp * d * d;
                       for (std::size_t k = 0; k < d; ++k) {
                         for (std::size_t j = 0; j < d; ++j) {
                           const std::size_t at = base + k * d + j;
                           if (j == k) {
                             const double root = std::sqrt(c[at] + cfg.eta);
                             if (1.0 - root > 0.0) dc[at] += s * cfg.lambda1 * (-0.5 / root);
                           } else {
                             dc[at] += s * cfg.lambda2 * 2.0 * c[at];
                           }
                         }
                       }
                     }
                   });
}

namespace {

// Centered rows of one covariance group.
struct GroupRows {
  std::vector<std::size_t> rows;  // flat row indices into x viewed as [rows × d]
  std::vector<double> xc;         // [rows × d]
};

GroupRows gather_centered(std::span<const double> x, std::span<const unsigned char> mask, std::size_t n,
                          std::size_t groups, std::size_t g, std::size_t d) {
  GroupRows gr;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j * groups + g]) gr.rows.push_back(j * groups + g);
  }
  const std::size_t cnt = gr.rows.size();
  gr.xc.resize(cnt * d);
  std::vector<double> mu(d, 0.0);
  for (std::size_t r = 0; r < cnt; ++r) {
    for (std::size_t k = 0; k < d; ++k) mu[k] += x[gr.rows[r] * d + k];
  }
  for (auto& m : mu) m /= static_cast<double>(cnt);
  for (std::size_t r = 0; r < cnt; ++r) {
    for (std::size_t k = 0; k < d; ++k) gr.xc[r * d + k] = x[gr.rows[r] * d + k] - mu[k];
  }
  return gr;
}

}  // namespace

ad::Var seq_vcr_loss_from_samples(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask_in,
                                  const RegConfig& cfg) {
  cfg.validate();
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 3) throw std::invalid_argument("regularizer input must be [N × T × d], got " + shape_string(xv.shape()));
  const bool pooled = cfg.cov_mode == CovMode::BatchPlusLength;
  const std::size_t n = pooled ? xv.dim(0) * xv.dim(1) : xv.dim(0);
  const std::size_t groups = pooled ? 1 : xv.dim(1);
  const std::size_t d = xv.dim(2);
  if (n < 2) throw std::invalid_argument("covariance needs at least 2 samples, got " + std::to_string(n));
  auto mask = mask_or_all(mask_in, n * groups);

  std::size_t used = 0;
  std::vector<std::size_t> counts(groups, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < n; ++j) counts[g] += mask[j * groups + g] != 0;
    used += counts[g] >= 2;
  }
  if (used == 0) return tape.constant(Tensor::scalar(0.0));
  const double norm = 1.0 / (static_cast<double>(used) * static_cast<double>(d));

  double total = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] < 2) continue;
    const auto gr = gather_centered(xv.values(), mask, n, groups, g, d);
    const std::size_t cnt = gr.rows.size();
    const double inv = 1.0 / static_cast<double>(cnt - 1);
    std::vector<double> gram(cnt * cnt);
    kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, cnt, cnt, d, gr.xc, gr.xc, gram, false);
    double frob = 0.0;
    for (double v : gram) frob += v * v;
    frob *= inv * inv;
    double var_term = 0.0, diag_sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double c = 0.0;
      for (std::size_t r = 0; r < cnt; ++r) c += gr.xc[r * d + k] * gr.xc[r * d + k];
      c *= inv;
      var_term += std::max(0.0, 1.0 - std::sqrt(c + cfg.eta));
      diag_sq += c * c;
    }
    total += cfg.lambda1 * var_term + cfg.lambda2 * std::max(0.0, frob - diag_sq);
  }
  total *= norm;

  return tape.push(Tensor::scalar(total), {x},
                   [x, n, groups, d, norm, cfg, mask = std::move(mask), counts](ad::Tape& tp, std::span<const double> og) {
                     const auto xs = tp.value(x).values();
                     auto dx = tp.grad_buffer(x);
                     for (std::size_t g = 0; g < groups; ++g) {
                       if (counts[g] < 2) continue;
                       const auto gr = gather_centered(xs, mask, n, groups, g, d);
                       const std::size_t cnt = gr.rows.size();
                       const double inv = 1.0 / static_cast<double>(cnt - 1);
                       // dL/dC = norm·(λ1·diag(h') + 2λ2·(C − diag C)); dXc = 2·Xc·dL/dC/(n−1).
                       std::vector<double> gram(cnt * cnt), gx(cnt * d);
                       kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, cnt, cnt, d, gr.xc, gr.xc, gram, false);
                       kernels::gemm(kernels::Trans::No, kernels::Trans::No, cnt, d, cnt, gram, gr.xc, gx, false);
                       std::vector<double> col(d);
                       for (std::size_t k = 0; k < d; ++k) {
                         double c = 0.0;
                         for (std::size_t r = 0; r < cnt; ++r) c += gr.xc[r * d + k] * gr.xc[r * d + k];
                         c *= inv;
                         const double root = std::sqrt(c + cfg.eta);
                         const double hinge = 1.0 - root > 0.0 ? -0.5 / root : 0.0;
                         col[k] = cfg.lambda1 * hinge - 2.0 * cfg.lambda2 * c;
                       }
                       const double s = og[0] * norm * 2.0 * inv;
                       for (std::size_t r = 0; r < cnt; ++r) {
                         double* dxr = &dx[gr.rows[r] * d];
                         const double* xr = &gr.xc[r * d];
                         const double* gxr = &gx[r * d];
                         for (std::size_t k = 0; k < d; ++k) {
                           dxr[k] += s * (col[k] * xr[k] + 2.0 * cfg.lambda2 * inv * gxr[k]);
                         }
                       }
                     }
                   });
}

LossTerms total_loss(ad::Tape& tape, ad::Var logits, std::span<const TokenId> targets,
                     std::span<const unsigned char> loss_mask, ad::Var projected, std::size_t n_seq,
                     std::size_t seq_len, std::span<const unsigned char> position_mask, const RegConfig& cfg) {
  LossTerms out;
  const ad::Var next = ad::cross_entropy(tape, logits, targets, loss_mask);
  out.next = tape.value(next).item();
  if (!cfg.enabled()) {
    out.total = next;
    return out;
  }
  if (!projected.valid()) throw std::invalid_argument("regularizer enabled but no projected representation given");
  const Tensor& pv = tape.value(projected);
  if (pv.rank() != 2 || pv.dim(0) != n_seq * seq_len) {
    throw std::invalid_argument("projected shape " + shape_string(pv.shape()) + " does not match " +
                                std::to_string(n_seq) + "×" + std::to_string(seq_len));
  }
  const ad::Var x = ad::reshape(tape, projected, Shape{n_seq, seq_len, pv.dim(1)});
  const ad::Var reg = seq_vcr_loss_from_samples(tape, x, position_mask, cfg);
  out.seqvcr = tape.value(reg).item();
  out.total = ad::add(tape, next, reg);
  return out;
}

}  // namespace seqvcr
