#include "seqvcr/vocab.hpp"

#include <stdexcept>

namespace seqvcr {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<pause>", "</pause_start>", "</pause_end>", "####"};
}

Vocab::Vocab(std::string separator) : separator_(std::move(separator)) {
  for (const auto& s : kReserved) add(s);
}

Vocab::Vocab(const std::vector<std::string>& tokens, std::string separator) : separator_(std::move(separator)) {
  if (tokens.size() < kNumReserved || !std::equal(kReserved.begin(), kReserved.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary does not start with the reserved symbols");
  }
  for (const auto& s : tokens) {
    if (find(s)) throw std::invalid_argument("duplicate vocabulary symbol '" + s + "'");
    add(s);
  }
}

TokenId Vocab::add(const std::string& symbol) {
  if (symbol.empty()) throw std::invalid_argument("empty vocabulary symbol");
  if (!separator_.empty() && symbol.find(separator_) != std::string::npos) {
    throw std::invalid_argument("symbol '" + symbol + "' contains the separator");
  }
  if (auto hit = find(symbol)) return *hit;
  const auto id = static_cast<TokenId>(symbols_.size());
  symbols_.push_back(symbol);
  index_.emplace(symbol, id);
  longest_ = std::max(longest_, symbol.size());
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view symbol) const {
  if (auto hit = find(symbol)) return *hit;
  throw std::invalid_argument("unknown symbol '" + std::string(symbol) + "'");
}

const std::string& Vocab::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(symbols_.size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  auto scan = [&](std::string_view piece) {
    std::size_t i = 0;
    while (i < piece.size()) {
      std::size_t len = std::min(longest_, piece.size() - i);
      for (; len > 0; --len) {
        if (auto hit = find(piece.substr(i, len))) {
          out.push_back(*hit);
          break;
        }
      }
      if (len == 0) throw std::invalid_argument("unknown symbol at '" + std::string(piece.substr(i)) + "'");
      i += len;
    }
  };
  if (separator_.empty()) {
    scan(text);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t stop = std::min(text.find(separator_, start), text.size());
    scan(text.substr(start, stop - start));
    start = stop + separator_.size();
  }
  return out;
}

std::string Vocab::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += separator_;
    out += symbol(ids[i]);
  }
  return out;
}

}  // namespace seqvcr
