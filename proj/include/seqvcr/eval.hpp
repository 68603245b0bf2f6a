#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqvcr/model.hpp"
#include "seqvcr/taskgen.hpp"

namespace seqvcr {

struct DecodeOptions {
  Variant variant = Variant::Vanilla;
  std::size_t pauses = 0;
  std::size_t batch_size = 64;
};

/// Tokens generated after the prompt: the trace (cot variant) plus answer.
std::size_t decode_length(const Sample& s, Variant v);

/// Greedy free-running decode. The answer is the trailing answer-length
/// tokens of the continuation.
std::vector<std::vector<TokenId>> decode_answers(const Transformer& model, const std::vector<Sample>& samples,
                                                 const DecodeOptions& opt);

/// Fraction of samples whose decoded answer equals the gold answer exactly.
double exact_match(const Transformer& model, const std::vector<Sample>& samples, const DecodeOptions& opt);

struct PositionAccuracy {
  /// Position p scored with gold tokens before it.
  std::vector<double> teacher_forced;
  /// Position p of the free-running decode.
  std::vector<double> free_running;
  double exact_match = 0.0;
};

/// Requires answers of uniform length.
PositionAccuracy position_accuracy(const Transformer& model, const std::vector<Sample>& samples,
                                   const DecodeOptions& opt);

/// Schoolbook work per product column c (c = 0 is the least significant of
/// the 2n−1 columns): digit multiplications a_i·b_j with i + j = c, and the
/// additions that fold them together with the incoming carry.
struct ColumnOps {
  std::size_t column = 0;
  std::size_t multiplications = 0;
  std::size_t additions = 0;
  std::size_t total() const { return multiplications + additions; }
};
std::vector<ColumnOps> operation_count_annotation(std::size_t n_digits);

struct Throughput {
  double examples_per_sec = 0.0;
  /// Pause frame (if any), trace (cot variant) and answer.
  double tokens_decoded_per_example = 0.0;
  std::vector<double> trial_rates;
};

/// One example at a time: `warmup` untimed generations, then `trials` timed
/// runs of `generations` each; reports the median rate.
Throughput measure_throughput(const Transformer& model, const std::vector<Sample>& samples, const DecodeOptions& opt,
                              std::size_t generations = 1000, std::size_t warmup = 50, std::size_t trials = 3);

/// T_target / T_base.
double normalized_throughput(double target_examples_per_sec, double base_examples_per_sec);

struct EvalReport {
  std::string run_id;
  std::string variant;
  std::size_t n_examples = 0;
  PositionAccuracy accuracy;
  Throughput throughput;
  std::optional<double> t_norm;
  std::string dataset_hash;
};

void write_report_csv(std::ostream& out, const EvalReport& r);
/// One row per answer position; multiplication runs also carry the column
/// operation counts (blank for the final carry digit).
void write_positions_csv(std::ostream& out, const EvalReport& r, const std::vector<ColumnOps>& ops = {},
                         bool reversed_digits = false);

}  // namespace seqvcr
