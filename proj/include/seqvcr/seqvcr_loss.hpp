#pragma once

// Training objective: next-token cross-entropy plus the sequential
// variance-covariance regularizer
//
//   L_reg = 1/(T·d) Σ_i Σ_k [ λ1·max(0, 1 − sqrt(C_i[k,k] + η))
//                           + λ2·Σ_{k'≠k} C_i[k,k']² ]
//
// where C_i is the unbiased covariance over the batch of the d-dimensional
// projected representations at sequence position i.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqvcr/autodiff.hpp"
#include "seqvcr/model.hpp"

namespace seqvcr {

enum class CovMode { PerPositionBatch, BatchPlusLength };

std::string to_string(CovMode m);
CovMode cov_mode_from_string(const std::string& s);

struct RegConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double eta = 0.001;
  CovMode cov_mode = CovMode::PerPositionBatch;
  /// Activation index the projection head reads (see ForwardOptions).
  std::size_t reg_layer = kFinalLayer;
  /// Whether pause-frame positions contribute to the covariance statistics.
  bool include_pause_positions = true;

  bool enabled() const { return lambda1 > 0.0 || lambda2 > 0.0; }
  void validate() const;
};

/// Covariance statistics over the sample axis, one group per sequence
/// position (or a single pooled group in batch-plus-length mode).
struct CovarianceStats {
  ad::Var cov;                       // [groups × d × d]
  Tensor mean;                       // [groups × d]
  std::vector<std::size_t> counts;   // samples per group
  std::size_t groups = 0;
  std::size_t dim = 0;

  /// Groups with at least two samples; only these enter the loss.
  std::size_t usable_groups() const;
};

/// x is [N × T × d]; mask is [N × T] (empty: every entry kept). Requires N ≥ 2.
CovarianceStats per_position_covariance(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask = {});
/// Pools all N·T rows of x into one covariance. Requires N·T ≥ 2.
CovarianceStats batch_length_covariance(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask = {});

ad::Var seq_vcr_loss(ad::Tape& tape, const CovarianceStats& stats, const RegConfig& cfg);

/// Same value as seq_vcr_loss over the covariance of x [N × T × d], without
/// forming any d×d matrix. With n samples per group and centered rows Xc,
///   ‖C‖_F² = ‖Xc Xcᵀ‖_F² / (n−1)²,   Xc·C = (Xc Xcᵀ)·Xc / (n−1),
/// so value and gradient cost O(n²·d) per group instead of O(n·d²).
ad::Var seq_vcr_loss_from_samples(ad::Tape& tape, ad::Var x, std::span<const unsigned char> mask,
                                  const RegConfig& cfg);

struct LossTerms {
  ad::Var total;
  double next = 0.0;
  double seqvcr = 0.0;
};

/// L = L_next + L_reg. `projected` is [N·T × P] from the projection head and
/// may be invalid when the regularizer is disabled; `position_mask` [N × T]
/// selects which positions enter the covariance.
LossTerms total_loss(ad::Tape& tape, ad::Var logits, std::span<const TokenId> targets,
                     std::span<const unsigned char> loss_mask, ad::Var projected, std::size_t n_seq,
                     std::size_t seq_len, std::span<const unsigned char> position_mask, const RegConfig& cfg);

}  // namespace seqvcr
