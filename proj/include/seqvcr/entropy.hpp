#pragma once

// Matrix-based entropy of token representations.
//
// For Z [T×d], K = Z Zᵀ; with p_i = λ_i(K) / tr(K),
//   S_α(Z) = ln(Σ p_i^α) / (1 − α),   S_1(Z) = −Σ p_i ln p_i.
// K and ZᵀZ share their nonzero spectrum, so the smaller of the two is
// decomposed. All values are in nats.

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "seqvcr/model.hpp"
#include "seqvcr/tensor.hpp"

namespace seqvcr {

enum class EntropyPath { Auto, Gram, Covariance };

/// K = Z Zᵀ for Z [T×d].
Tensor gram_matrix(const Tensor& z);

/// Trace-normalized spectrum of Z Zᵀ via the requested path, sorted
/// descending. Eigenvalues within 1e-12·tr of zero are set to zero.
std::vector<double> normalized_spectrum(const Tensor& z, EntropyPath path = EntropyPath::Auto);

/// alpha == 1 selects the Shannon limit.
double entropy_of_spectrum(const std::vector<double>& p, double alpha);

/// Rejects alpha <= 0 and an all-zero Z.
double matrix_entropy(const Tensor& z, double alpha = 1.0, EntropyPath path = EntropyPath::Auto);

struct ProbeOptions {
  double alpha = 1.0;
  /// Positions holding these tokens are dropped before computing Z. Padding
  /// is always dropped.
  std::vector<TokenId> drop_tokens;
  TokenId pad_token = 0;
};

struct EntropyProfile {
  double alpha = 1.0;
  /// mean_by_layer[l] is the batch mean of S_α(Z^(l)); l = 0 is the embedding.
  std::vector<double> mean_by_layer;
  /// per_sequence[l][s].
  std::vector<std::vector<double>> per_sequence;
  std::size_t n_sequences = 0;
  /// Longest kept sequence; bounds every entropy by ln(min(T, d)).
  std::size_t max_tokens = 0;

  std::size_t n_layers() const { return mean_by_layer.size(); }
  /// Mean over block outputs 1..L (everything between the embedding and the
  /// classifier head).
  double intermediate_mean() const;
  /// One single-sequence profile per probed sequence.
  std::vector<EntropyProfile> split() const;
};

EntropyProfile layer_entropy_profile(const Transformer& model, const std::vector<std::vector<TokenId>>& sequences,
                                     const ProbeOptions& opt = {});

struct EntropyHistogram {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n_bins = 0;
  /// counts[layer][bin]
  std::vector<std::vector<std::size_t>> counts;

  double bin_lo(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins); }
  double bin_hi(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(n_bins); }
  /// Count-weighted mean bin center for one layer.
  double mean_center(std::size_t layer) const;
};

/// Bins each profile's per-layer mean on [0, ln t_max] with fixed width. The
/// top edge belongs to the last bin.
EntropyHistogram entropy_histogram(const std::vector<EntropyProfile>& profiles, std::size_t t_max,
                                   std::size_t n_bins = 20);

void write_profile_csv(std::ostream& out, const std::string& run_id, const EntropyProfile& p, bool header = true);
void write_histogram_csv(std::ostream& out, const EntropyHistogram& h, bool header = true);

}  // namespace seqvcr
