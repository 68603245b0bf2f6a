#pragma once

#include <cstdint>
#include <vector>

#include "seqvcr/model.hpp"

namespace seqvcr {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moments, one buffer per parameter in model order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<Parameter>& params);
  bool operator==(const AdamState&) const = default;
};

/// Decoupled weight decay, then the bias-corrected Adam update:
///   p ← p − lr·wd·p
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr · (m / (1−β1^t)) / (sqrt(v / (1−β2^t)) + eps)
/// Decay applies to every parameter.
void adamw_step(std::vector<Parameter>& params, AdamState& state, const AdamWConfig& cfg);

double global_grad_norm(const std::vector<Parameter>& params);
/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

}  // namespace seqvcr
