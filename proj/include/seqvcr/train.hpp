#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqvcr/checkpoint.hpp"
#include "seqvcr/model.hpp"
#include "seqvcr/optimizer.hpp"
#include "seqvcr/seqvcr_loss.hpp"
#include "seqvcr/taskgen.hpp"

namespace seqvcr {

struct TrainConfig {
  Variant variant = Variant::Vanilla;
  TaskKind task = TaskKind::Multiplication;
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  RegConfig reg;
  /// vocab_size is taken from the dataset.
  ModelConfig model;
  std::uint64_t seed = 0;
  /// Steps between evaluations; 0 evaluates only before and after training.
  std::size_t eval_every = 0;
  std::size_t log_every = 50;
  /// Steps between checkpoints; 0 writes only the final one.
  std::size_t checkpoint_every = 0;
  /// Global gradient-norm bound; 0 disables clipping.
  double grad_clip = 1.0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t pauses = 0;
  /// Held-out samples used for the in-training exact match.
  std::size_t eval_size = 256;
  /// Stop after this many optimizer steps; 0 runs every epoch.
  std::size_t max_steps = 0;

  void validate() const;
  AdamWConfig adamw() const { return {learning_rate, beta1, beta2, adam_eps, weight_decay}; }

  /// Flat key=value text, one key per line, every field present.
  std::string to_text() const;
  /// Applies one key=value assignment; unknown keys are rejected.
  void set(const std::string& key, const std::string& value);
  /// Applies every assignment in `text` (blank lines and # comments skipped).
  void apply_text(const std::string& text);
  static const std::vector<std::string>& keys();
};

/// Defaults for a variant/task pair: λ1=1.0, λ2=0.004, batch 32 for
/// multiplication; λ1=0.1, λ2=0.5, batch 128 otherwise; two pause tokens for
/// the pause variants; learning rate 1e-4 for 100 epochs.
TrainConfig make_variant(Variant v, TaskKind task);

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_next = 0.0;
  double loss_seqvcr = 0.0;
  double eval_exact_match = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  /// Seconds since the run started, one entry per row; kept out of the
  /// metrics CSV so that file is reproducible.
  std::vector<double> wall_seconds;

  static void write_header(std::ostream& out);
  static void write_row(std::ostream& out, const MetricsRow& r);
  void write_csv(std::ostream& out) const;
  static std::vector<MetricsRow> read_csv(std::istream& in);
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Fixed-shape batch assembled from samples, right-padded.
struct TrainBatch {
  TokenBatch inputs;
  std::vector<TokenId> targets;
  std::vector<unsigned char> loss_mask;
  std::vector<unsigned char> position_mask;
};
TrainBatch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices, const TrainConfig& cfg);

struct TrainHooks {
  /// Called after every logged row (row, seconds since start).
  std::function<void(const MetricsRow&, double)> on_row;
  /// Called with (step, path) after a checkpoint is written.
  std::function<void(std::size_t, const std::filesystem::path&)> on_checkpoint;
};

struct TrainOptions {
  /// Directory for step checkpoints and the final checkpoint; empty keeps
  /// everything in memory.
  std::filesystem::path checkpoint_dir;
  /// Resume from this checkpoint.
  std::optional<Checkpoint> resume;
  /// Simulated interruption: stop after this step, write a checkpoint, and
  /// skip the end-of-run row.
  std::size_t stop_after = 0;
  TrainHooks hooks;
};

struct TrainResult {
  Transformer model;
  AdamState adam;
  TrainerState trainer;
  MetricsLog log;
  bool completed = false;
};

std::size_t steps_per_epoch(std::size_t n_train, const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                  std::size_t vocab_size, const TrainOptions& opt = {});

/// Name of the checkpoint written at `step`.
std::string checkpoint_name(std::size_t step);

}  // namespace seqvcr
