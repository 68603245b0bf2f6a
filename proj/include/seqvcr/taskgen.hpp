#pragma once

// Synthetic reasoning tasks and sequence layout.
//
//   mult  n-digit × n-digit multiplication, digits as tokens. The input is
//         "a*b"; the answer is the product zero-padded to 2n digits. The
//         reasoning trace lists the partial products a·b_j·10^j (j counting
//         from the least significant multiplier digit, zero-padded to n+1+j
//         digits) joined by "+", with the running sum after each interior
//         partial shown in parentheses, closed by "####".
//   arith Bracketed expressions over Z_p with + - * /, operands and results
//         are single tokens. Each trace step reduces the leftmost innermost
//         bracket and ends with "=".
//   lis   Length of the longest strictly increasing subsequence of values
//         in [1, 50]. The trace is the DP array followed by "####".

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqvcr/model.hpp"
#include "seqvcr/vocab.hpp"

namespace seqvcr {

enum class TaskKind { Multiplication, Arithmetic, Lis };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

inline constexpr int kDefaultPrime = 23;
inline constexpr int kLisMaxValue = 50;

struct DatasetSpec {
  TaskKind task = TaskKind::Multiplication;
  /// Digits per factor, operator count, or LIS sequence length.
  std::size_t size = 4;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  double train_fraction = 0.9;
  double test_fraction = 0.1;
  int prime = kDefaultPrime;
  /// Write every multiplication number least-significant digit first.
  bool reverse_digits = false;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
  bool operator==(const DatasetSpec&) const = default;
};

struct Sample {
  std::vector<TokenId> input;
  std::vector<TokenId> cot;
  std::vector<TokenId> answer;
  nlohmann::ordered_json meta;
};

Vocab make_vocab(const DatasetSpec& spec);

/// Returns `count` samples with distinct inputs, in generation order.
std::vector<Sample> gen_multiplication(std::size_t n_digits, std::size_t count, std::uint64_t seed,
                                       const Vocab& vocab, bool reverse_digits = false);
std::vector<Sample> gen_arithmetic_expression(std::size_t n_operators, std::size_t count, std::uint64_t seed,
                                              const Vocab& vocab, int prime = kDefaultPrime);
std::vector<Sample> gen_lis(std::size_t seq_len, std::size_t count, std::uint64_t seed, const Vocab& vocab);
std::vector<Sample> generate(const DatasetSpec& spec, const Vocab& vocab);

/// Decimal string of a·b zero-padded to 2n digits, plus the trace text.
struct MultiplicationTrace {
  std::string answer;
  std::vector<std::string> partials;
  std::vector<std::string> running_sums;  // after partials 1..n-2
  std::string text;
};
MultiplicationTrace multiplication_trace(std::uint64_t a, std::uint64_t b, std::size_t n_digits);

struct LisResult {
  std::size_t length = 0;
  std::vector<std::size_t> dp;
};
/// O(n²) DP; dp[i] is the longest strictly increasing run ending at i.
LisResult lis_oracle(const std::vector<int>& seq);

struct Dataset {
  DatasetSpec spec;
  Vocab vocab;
  std::vector<Sample> train;
  std::vector<Sample> test;
};
Dataset build_dataset(const DatasetSpec& spec);

enum class Variant { Vanilla, Cot, Pause, SeqVcr, SeqVcrPause };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
inline bool uses_cot(Variant v) { return v == Variant::Cot; }
inline bool uses_pause(Variant v) { return v == Variant::Pause || v == Variant::SeqVcrPause; }
inline bool uses_reg(Variant v) { return v == Variant::SeqVcr || v == Variant::SeqVcrPause; }

struct Assembled {
  std::vector<TokenId> tokens;
  /// loss_mask[t] is 1 when the prediction made at t (of tokens[t+1]) is
  /// supervised.
  std::vector<unsigned char> loss_mask;
  /// Tokens fed before decoding starts (input plus any pause frame).
  std::size_t prompt_len = 0;
  /// Index in `tokens` where the answer begins.
  std::size_t answer_offset = 0;
};

/// vanilla: input ⊕ answer; cot: input ⊕ trace ⊕ answer; pause:
/// input ⊕ </pause_start> ⊕ <pause>×k ⊕ </pause_end> ⊕ answer. Rejects
/// sequences longer than max_len (0 disables the check).
Assembled assemble_sequence(const Sample& s, Variant v, std::size_t pauses, std::size_t max_len = 0);

}  // namespace seqvcr
