#include "seqvcr/entropy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>
#include <stdexcept>

namespace seqvcr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_matrix(const Tensor& z) {
  if (z.rank() != 2) throw std::invalid_argument("expected a [T×d] matrix, got " + shape_string(z.shape()));
  return {z.values().data(), static_cast<Eigen::Index>(z.dim(0)), static_cast<Eigen::Index>(z.dim(1))};
}

}  // namespace

Tensor gram_matrix(const Tensor& z) {
  const auto m = as_matrix(z);
  Tensor k(Shape{z.dim(0), z.dim(0)});
  Eigen::Map<RowMat>(k.values().data(), m.rows(), m.rows()).noalias() = m * m.transpose();
  return k;
}

std::vector<double> normalized_spectrum(const Tensor& z, EntropyPath path) {
  const auto m = as_matrix(z);
  if (path == EntropyPath::Auto) path = m.cols() < m.rows() ? EntropyPath::Covariance : EntropyPath::Gram;
  const Eigen::MatrixXd k = path == EntropyPath::Gram ? Eigen::MatrixXd(m * m.transpose())
                                                      : Eigen::MatrixXd(m.transpose() * m);
  const double trace = k.trace();
  if (!(trace > 0.0)) throw std::invalid_argument("matrix entropy of an all-zero representation is undefined");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  std::vector<double> p(solver.eigenvalues().data(), solver.eigenvalues().data() + k.rows());
  double kept = 0.0;
  for (auto& v : p) {
    if (std::abs(v) <= 1e-12 * trace || v < 0.0) v = 0.0;
    kept += v;
  }
  for (auto& v : p) v /= kept;
  std::sort(p.begin(), p.end(), std::greater<>());
  return p;
}

double entropy_of_spectrum(const std::vector<double>& p, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("entropy order alpha must be positive");
  double s = 0.0;
  if (alpha == 1.0) {
    for (double v : p) {
      if (v > 0.0) s -= v * std::log(v);
    }
    return std::max(s, 0.0);
  }
  for (double v : p) {
    if (v > 0.0) s += std::pow(v, alpha);
  }
  return std::max(std::log(s) / (1.0 - alpha), 0.0);
}

double matrix_entropy(const Tensor& z, double alpha, EntropyPath path) {
  if (!(alpha > 0.0)) throw std::invalid_argument("entropy order alpha must be positive");
  return entropy_of_spectrum(normalized_spectrum(z, path), alpha);
}

double EntropyProfile::intermediate_mean() const {
  if (mean_by_layer.size() < 2) throw std::logic_error("profile has no block layers");
  double s = 0.0;
  for (std::size_t l = 1; l < mean_by_layer.size(); ++l) s += mean_by_layer[l];
  return s / static_cast<double>(mean_by_layer.size() - 1);
}

std::vector<EntropyProfile> EntropyProfile::split() const {
  std::vector<EntropyProfile> out(n_sequences);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    auto& p = out[s];
    p.alpha = alpha;
    p.n_sequences = 1;
    p.max_tokens = max_tokens;
    for (const auto& layer : per_sequence) {
      p.mean_by_layer.push_back(layer[s]);
      p.per_sequence.push_back({layer[s]});
    }
  }
  return out;
}

EntropyProfile layer_entropy_profile(const Transformer& model, const std::vector<std::vector<TokenId>>& sequences,
                                     const ProbeOptions& opt) {
  if (sequences.empty()) throw std::invalid_argument("probe batch is empty");
  if (!(opt.alpha > 0.0)) throw std::invalid_argument("entropy order alpha must be positive");
  const auto& cfg = model.config();
  const std::size_t layers = cfg.n_layers + 1;
  const std::size_t d = cfg.d_model;

  std::vector<std::vector<std::size_t>> keep(sequences.size());
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.size() > cfg.max_seq_len) {
      throw std::invalid_argument("probe sequence " + std::to_string(s) + " has " + std::to_string(seq.size()) +
                                  " tokens, model allows " + std::to_string(cfg.max_seq_len));
    }
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const TokenId tok = seq[t];
      if (tok == opt.pad_token) continue;
      if (std::find(opt.drop_tokens.begin(), opt.drop_tokens.end(), tok) != opt.drop_tokens.end()) continue;
      keep[s].push_back(t);
    }
    if (keep[s].empty()) throw std::invalid_argument("probe sequence " + std::to_string(s) + " has no kept positions");
  }

  EntropyProfile prof;
  prof.alpha = opt.alpha;
  prof.n_sequences = sequences.size();
  prof.per_sequence.assign(layers, std::vector<double>(sequences.size(), 0.0));
  for (const auto& k : keep) prof.max_tokens = std::max(prof.max_tokens, k.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    try {
      ad::Tape tape(false);
      const auto fr = model.forward(tape, TokenBatch::single(sequences[s]), ForwardOptions{});
      for (std::size_t l = 0; l < layers; ++l) {
        const Tensor& act = tape.value(fr.layer_activations[l]);
        Tensor z(Shape{keep[s].size(), d});
        for (std::size_t r = 0; r < keep[s].size(); ++r) {
          std::copy_n(&act.values()[keep[s][r] * d], d, &z.values()[r * d]);
        }
        prof.per_sequence[l][s] = matrix_entropy(z, opt.alpha);
      }
    } catch (...) {
#pragma omp critical(seqvcr_probe_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& layer : prof.per_sequence) {
    double sum = 0.0;
    for (double v : layer) sum += v;
    prof.mean_by_layer.push_back(sum / static_cast<double>(sequences.size()));
  }
  return prof;
}

double EntropyHistogram::mean_center(std::size_t layer) const {
  double num = 0.0, den = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double c = static_cast<double>(counts.at(layer)[b]);
    num += c * 0.5 * (bin_lo(b) + bin_hi(b));
    den += c;
  }
  return den > 0.0 ? num / den : 0.0;
}

EntropyHistogram entropy_histogram(const std::vector<EntropyProfile>& profiles, std::size_t t_max,
                                   std::size_t n_bins) {
  if (profiles.empty()) throw std::invalid_argument("no profiles to bin");
  if (t_max < 2) throw std::invalid_argument("histogram range needs t_max >= 2");
  if (n_bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  const std::size_t layers = profiles.front().n_layers();
  EntropyHistogram h;
  h.hi = std::log(static_cast<double>(t_max));
  h.n_bins = n_bins;
  h.counts.assign(layers, std::vector<std::size_t>(n_bins, 0));
  for (const auto& p : profiles) {
    if (p.n_layers() != layers) throw std::invalid_argument("profiles disagree on layer count");
    for (std::size_t l = 0; l < layers; ++l) {
      const double v = p.mean_by_layer[l];
      const double pos = (v - h.lo) / (h.hi - h.lo) * static_cast<double>(n_bins);
      const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(n_bins - 1)));
      ++h.counts[l][b];
    }
  }
  return h;
}

void write_profile_csv(std::ostream& out, const std::string& run_id, const EntropyProfile& p, bool header) {
  if (header) out << "run_id,layer,mean_entropy_nats,alpha,n_sequences\n";
  const auto prec = out.precision(17);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    out << run_id << ',' << l << ',' << p.mean_by_layer[l] << ',' << p.alpha << ',' << p.n_sequences << '\n';
  }
  out.precision(prec);
}

void write_histogram_csv(std::ostream& out, const EntropyHistogram& h, bool header) {
  if (header) out << "layer,bin_lo,bin_hi,count\n";
  const auto prec = out.precision(17);
  for (std::size_t l = 0; l < h.counts.size(); ++l) {
    for (std::size_t b = 0; b < h.n_bins; ++b) {
      out << l << ',' << h.bin_lo(b) << ',' << h.bin_hi(b) << ',' << h.counts[l][b] << '\n';
    }
  }
  out.precision(prec);
}

}  // namespace seqvcr
