#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqvcr/model.hpp"

namespace seqvcr {

/// Dense token-string ↔ id map. The first ids are always the reserved
/// symbols below; task symbols follow in insertion order.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kPause = 3;
  static constexpr TokenId kPauseStart = 4;
  static constexpr TokenId kPauseEnd = 5;
  static constexpr TokenId kAnswerSep = 6;
  static constexpr std::size_t kNumReserved = 7;

  /// `separator` is placed between tokens when rendering text and splits
  /// text before lookup when tokenizing; empty means tokens abut.
  explicit Vocab(std::string separator = "");
  Vocab(const std::vector<std::string>& tokens, std::string separator);

  TokenId add(const std::string& symbol);
  std::optional<TokenId> find(std::string_view symbol) const;
  TokenId id(std::string_view symbol) const;
  const std::string& symbol(TokenId id) const;

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& separator() const { return separator_; }

  /// Greedy longest match within each separator-delimited piece. Unknown
  /// symbols are rejected, naming the offending text.
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& o) const { return symbols_ == o.symbols_ && separator_ == o.separator_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::string separator_;
  std::size_t longest_ = 0;
};

}  // namespace seqvcr
