#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace seqvcr {

/// SplitMix64 finalizer. Used to derive independent stream seeds from the
/// master seed: derive_seed(master, a, b) = mix(mix(master ^ mix(a)) ^ mix(b)).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

/// Seeded generator with platform-independent distributions. The engine is
/// std::mt19937_64 (fully specified by the standard); the distributions are
/// written out here because the standard library ones are implementation
/// defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [lo, hi], rejection sampled (no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (both outputs are used).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace seqvcr
