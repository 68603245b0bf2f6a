#pragma once

// Binary checkpoint, little-endian, version 1:
//
//   magic      8 bytes  "SEQVCRCK"
//   version    u32
//   model      str      ModelConfig as key=value lines
//   train      str      TrainConfig as key=value lines (opaque here)
//   trainer    7 × 8    step u64, window sums f64 ×3, window count u64,
//                       last eval f64, has eval u64
//   n_params   u64
//   per param: name str, rank u64, dims u64 × rank,
//              values f64 × numel, adam m f64 × numel, adam v f64 × numel
//   adam_step  u64
//   digest     32 bytes SHA-256 of everything above
//
// where str is a u64 byte length followed by the bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "seqvcr/model.hpp"
#include "seqvcr/optimizer.hpp"

namespace seqvcr {

/// Loop state beyond the weights and moments needed to resume exactly.
struct TrainerState {
  std::uint64_t step = 0;
  double window_total = 0.0;
  double window_next = 0.0;
  double window_reg = 0.0;
  std::uint64_t window_count = 0;
  double last_eval = 0.0;
  bool has_eval = false;

  bool operator==(const TrainerState&) const = default;
};

struct Checkpoint {
  ModelConfig model_config;
  std::string train_config;
  TrainerState trainer;
  std::vector<Parameter> params;
  AdamState adam;
};

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Transformer& model, const AdamState& adam,
                     const std::string& train_config, const TrainerState& trainer);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds a model from a checkpoint, checking names and shapes.
Transformer restore_model(const Checkpoint& ck);

}  // namespace seqvcr
