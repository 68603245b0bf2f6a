#include <gtest/gtest.h>

#include <cmath>

#include "seqvcr/seqvcr_loss.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace seqvcr {
namespace {

using ad::Tape;
using ad::Var;
using testing::random_tensor;

using oracle::two_pass_covariance;

double hand_loss(const std::vector<std::vector<double>>& covs, std::size_t d, const RegConfig& cfg) {
  return oracle::seq_vcr_by_hand(covs, d, cfg.lambda1, cfg.lambda2, cfg.eta);
}

CovarianceStats direct_stats(Tape& tape, const std::vector<std::vector<double>>& covs, std::size_t d) {
  Tensor t(Shape{covs.size(), d, d});
  for (std::size_t g = 0; g < covs.size(); ++g)
    for (std::size_t i = 0; i < d * d; ++i) t[g * d * d + i] = covs[g][i];
  CovarianceStats s;
  s.cov = tape.input(std::move(t));
  s.counts.assign(covs.size(), 8);
  s.groups = covs.size();
  s.dim = d;
  return s;
}

RegConfig reg(double l1, double l2, CovMode mode = CovMode::PerPositionBatch) {
  RegConfig c;
  c.lambda1 = l1;
  c.lambda2 = l2;
  c.cov_mode = mode;
  return c;
}

TEST(SeqVcrLoss, IdentityCovarianceGivesZero) {
  const std::size_t d = 5;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t k = 0; k < d; ++k) eye[k * d + k] = 1.0;
  Tape tape;
  const auto stats = direct_stats(tape, {eye, eye, eye}, d);
  EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, reg(1.0, 0.004))).item(), 0.0, 1e-9);
  EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, reg(0.1, 0.5))).item(), 0.0, 1e-9);
}

// 1 − sqrt(0.001) to 25 digits.
TEST(SeqVcrLoss, ZeroCovarianceGivesHingeAtEta) {
  const std::size_t d = 4;
  Tape tape;
  const auto stats = direct_stats(tape, {std::vector<double>(d * d, 0.0), std::vector<double>(d * d, 0.0)}, d);
  EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, reg(1.0, 0.0))).item(), 0.9683772233983162066800111, 1e-9);
  EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, reg(1.0, 0.7))).item(), 0.9683772233983162066800111, 1e-9);
}

// The same two values reached through sample rows instead of a given covariance.
TEST(SeqVcrLoss, HandValuesFromSamples) {
  const std::size_t d = 3, n = 2 * d;
  // Rows ±a·e_k: zero mean, diagonal covariance 2a²/(n−1) = 1.
  const double a = std::sqrt(static_cast<double>(n - 1) / 2.0);
  Tensor x(Shape{n, 1, d}, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    x[(2 * k) * d + k] = a;
    x[(2 * k + 1) * d + k] = -a;
  }
  Tensor same(Shape{n, 2, d}, 0.37);
  for (bool fused : {false, true}) {
    Tape tape;
    const Var xi = tape.input(x), xs = tape.input(same);
    const RegConfig cfg = reg(1.0, 0.004);
    const double id = fused ? tape.value(seq_vcr_loss_from_samples(tape, xi, {}, cfg)).item()
                            : tape.value(seq_vcr_loss(tape, per_position_covariance(tape, xi), cfg)).item();
    const double zero = fused ? tape.value(seq_vcr_loss_from_samples(tape, xs, {}, cfg)).item()
                              : tape.value(seq_vcr_loss(tape, per_position_covariance(tape, xs), cfg)).item();
    EXPECT_NEAR(id, 0.0, 1e-9);
    EXPECT_NEAR(zero, 0.9683772233983162066800111, 1e-9);
  }
}

struct MaskedBatch {
  Tensor x;
  std::vector<unsigned char> mask;
  std::size_t n, T, d;

  std::vector<double> row(std::size_t r) const {
    const double* p = x.values().data() + r * d;
    return {p, p + d};
  }
};

MaskedBatch random_batch(std::uint64_t seed, std::size_t n, std::size_t T, std::size_t d, double keep) {
  Rng rng(seed);
  MaskedBatch b{random_tensor({n, T, d}, rng, 0.8), std::vector<unsigned char>(n * T), n, T, d};
  for (auto& m : b.mask) m = rng.uniform() < keep;
  return b;
}

TEST(SeqVcrLoss, PerPositionCovarianceMatchesTwoPassOracle) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = random_batch(seed, 9, 6, 5, 0.75);
    Tape tape;
    const auto stats = per_position_covariance(tape, tape.input(b.x), b.mask);
    const auto cov = tape.value(stats.cov).values();
    ASSERT_EQ(stats.groups, b.T);
    for (std::size_t t = 0; t < b.T; ++t) {
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < b.n; ++i) {
        if (!b.mask[i * b.T + t]) continue;
        rows.push_back(b.row(i * b.T + t));
      }
      ASSERT_EQ(stats.counts[t], rows.size());
      if (rows.size() < 2) continue;
      const auto expected = two_pass_covariance(rows, b.d);
      for (std::size_t i = 0; i < b.d * b.d; ++i) EXPECT_NEAR(cov[t * b.d * b.d + i], expected[i], 1e-10);
    }
  }
}

TEST(SeqVcrLoss, LossMatchesOracleOnRandomBatches) {
  for (CovMode mode : {CovMode::PerPositionBatch, CovMode::BatchPlusLength}) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      const auto b = random_batch(seed, 7, 5, 4, 0.8);
      std::vector<std::vector<double>> covs;
      if (mode == CovMode::PerPositionBatch) {
        for (std::size_t t = 0; t < b.T; ++t) {
          std::vector<std::vector<double>> rows;
          for (std::size_t i = 0; i < b.n; ++i)
            if (b.mask[i * b.T + t]) rows.push_back(b.row(i * b.T + t));
          if (rows.size() >= 2) covs.push_back(two_pass_covariance(rows, b.d));
        }
      } else {
        std::vector<std::vector<double>> rows;
        for (std::size_t r = 0; r < b.n * b.T; ++r)
          if (b.mask[r]) rows.push_back(b.row(r));
        covs.push_back(two_pass_covariance(rows, b.d));
      }
      const RegConfig cfg = reg(1.0, 0.3, mode);
      const double expected = hand_loss(covs, b.d, cfg);
      Tape tape;
      const Var x = tape.input(b.x);
      const auto stats = mode == CovMode::PerPositionBatch ? per_position_covariance(tape, x, b.mask)
                                                           : batch_length_covariance(tape, x, b.mask);
      EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, cfg)).item(), expected, 1e-10);
      EXPECT_NEAR(tape.value(seq_vcr_loss_from_samples(tape, x, b.mask, cfg)).item(), expected, 1e-10);
    }
  }
}

TEST(SeqVcrLoss, PooledCovarianceIsOneGroup) {
  const auto b = random_batch(20, 4, 3, 2, 1.0);
  Tape tape;
  const auto stats = batch_length_covariance(tape, tape.input(b.x));
  EXPECT_EQ(stats.groups, 1u);
  EXPECT_EQ(stats.counts[0], 12u);
}

TEST(SeqVcrLoss, DirectGradientMatchesFiniteDifferences) {
  const auto b = random_batch(30, 5, 3, 4, 0.9);
  for (CovMode mode : {CovMode::PerPositionBatch, CovMode::BatchPlusLength}) {
    const RegConfig cfg = reg(1.0, 0.5, mode);
    testing::expect_gradients_match(
        [&](Tape& t, const std::vector<Var>& v) {
          const auto stats = mode == CovMode::PerPositionBatch ? per_position_covariance(t, v[0], b.mask)
                                                               : batch_length_covariance(t, v[0], b.mask);
          return seq_vcr_loss(t, stats, cfg);
        },
        {b.x});
  }
}

TEST(SeqVcrLoss, FusedGradientMatchesDirect) {
  for (CovMode mode : {CovMode::PerPositionBatch, CovMode::BatchPlusLength}) {
    const auto b = random_batch(40, 8, 4, 6, 0.85);
    const RegConfig cfg = reg(1.0, 0.004, mode);
    Tape t1, t2;
    const Var x1 = t1.input(b.x), x2 = t2.input(b.x);
    const auto stats = mode == CovMode::PerPositionBatch ? per_position_covariance(t1, x1, b.mask)
                                                         : batch_length_covariance(t1, x1, b.mask);
    const Var direct = seq_vcr_loss(t1, stats, cfg);
    const Var fused = seq_vcr_loss_from_samples(t2, x2, b.mask, cfg);
    EXPECT_NEAR(t1.value(direct).item(), t2.value(fused).item(), 1e-12);
    t1.backward(direct);
    t2.backward(fused);
    const auto g1 = t1.grad(x1), g2 = t2.grad(x2);
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
  }
}

TEST(SeqVcrLoss, GroupsWithFewerThanTwoSamplesAreSkipped) {
  auto b = random_batch(50, 4, 3, 2, 1.0);
  for (std::size_t i = 1; i < b.n; ++i) b.mask[i * b.T + 2] = 0;
  Tape tape;
  const auto stats = per_position_covariance(tape, tape.input(b.x), b.mask);
  EXPECT_EQ(stats.usable_groups(), 2u);
  const RegConfig cfg = reg(1.0, 0.1);
  EXPECT_NEAR(tape.value(seq_vcr_loss(tape, stats, cfg)).item(),
              tape.value(seq_vcr_loss_from_samples(tape, tape.input(b.x), b.mask, cfg)).item(), 1e-12);
}

TEST(SeqVcrLoss, TotalLossAddsRegularizerOnlyWhenEnabled) {
  Rng rng(60);
  const std::size_t n = 3, T = 4, V = 5, P = 6;
  const Tensor logits = random_tensor({n * T, V}, rng), proj = random_tensor({n * T, P}, rng);
  std::vector<TokenId> targets(n * T, 2);
  std::vector<unsigned char> loss_mask(n * T, 1), pos_mask(n * T, 1);
  Tape tape;
  const Var l = tape.input(logits), p = tape.input(proj);
  const auto off = total_loss(tape, l, targets, loss_mask, Var{}, n, T, pos_mask, RegConfig{});
  EXPECT_EQ(off.seqvcr, 0.0);
  EXPECT_EQ(tape.value(off.total).item(), off.next);
  const RegConfig cfg = reg(1.0, 0.004);
  const auto on = total_loss(tape, l, targets, loss_mask, p, n, T, pos_mask, cfg);
  EXPECT_NEAR(tape.value(on.total).item(), on.next + on.seqvcr, 1e-15);
  EXPECT_GT(on.seqvcr, 0.0);
  EXPECT_THROW(total_loss(tape, l, targets, loss_mask, Var{}, n, T, pos_mask, cfg), std::invalid_argument);
}

TEST(SeqVcrLoss, ConfigAndInputValidation) {
  RegConfig c = reg(1.0, 0.0);
  c.eta = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(reg(-1.0, 0.0).validate(), std::invalid_argument);
  EXPECT_EQ(cov_mode_from_string(to_string(CovMode::BatchPlusLength)), CovMode::BatchPlusLength);
  EXPECT_THROW(cov_mode_from_string("pooled"), std::invalid_argument);
  Tape tape;
  EXPECT_THROW(per_position_covariance(tape, tape.input(Tensor(Shape{1, 3, 2}))), std::invalid_argument);
  EXPECT_THROW(per_position_covariance(tape, tape.input(Tensor(Shape{3, 2}))), std::invalid_argument);
}

}  // namespace
}  // namespace seqvcr
