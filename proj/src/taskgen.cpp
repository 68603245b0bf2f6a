#include "seqvcr/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <stdexcept>

#include "seqvcr/rng.hpp"

namespace seqvcr {

namespace {

constexpr std::uint64_t kMultStream = 0x6d756c74;
constexpr std::uint64_t kArithStream = 0x61726974;
constexpr std::uint64_t kLisStream = 0x6c6973;
constexpr std::size_t kMaxMultDigits = 9;

std::uint64_t pow10(std::size_t e) {
  std::uint64_t v = 1;
  for (std::size_t i = 0; i < e; ++i) v *= 10;
  return v;
}

std::string padded(std::uint64_t v, std::size_t width) {
  std::string s = std::to_string(v);
  if (s.size() > width) throw std::logic_error("value " + s + " wider than " + std::to_string(width) + " digits");
  return std::string(width - s.size(), '0') + s;
}

template <typename Make>
std::vector<Sample> distinct_samples(std::size_t count, Rng& rng, Make&& make) {
  std::vector<Sample> out;
  out.reserve(count);
  std::set<std::vector<TokenId>> seen;
  const std::size_t max_attempts = 50 * count + 100000;
  for (std::size_t attempts = 0; out.size() < count; ++attempts) {
    if (attempts >= max_attempts) {
      throw std::invalid_argument("could not draw " + std::to_string(count) + " distinct samples (got " +
                                  std::to_string(out.size()) + ")");
    }
    Sample s = make(rng);
    if (seen.insert(s.input).second) out.push_back(std::move(s));
  }
  return out;
}

// Z_p arithmetic.
int mod(long long v, int p) { return static_cast<int>(((v % p) + p) % p); }

int mod_pow(long long b, int e, int p) {
  long long r = 1;
  b = mod(b, p);
  for (; e > 0; e >>= 1, b = b * b % p) {
    if (e & 1) r = r * b % p;
  }
  return static_cast<int>(r);
}

int apply_op(char op, int a, int b, int p) {
  switch (op) {
    case '+': return mod(static_cast<long long>(a) + b, p);
    case '-': return mod(static_cast<long long>(a) - b, p);
    case '*': return mod(static_cast<long long>(a) * b, p);
    case '/':
      if (b == 0) throw std::domain_error("division by zero in Z_p");
      return mod(static_cast<long long>(a) * mod_pow(b, p - 2, p), p);
  }
  throw std::logic_error("unknown operator");
}

struct Expr {
  int value = 0;  // leaf operand, or cached value of an internal node
  char op = 0;    // 0 for leaves
  std::unique_ptr<Expr> lhs, rhs;

  bool leaf() const { return op == 0; }
};

std::unique_ptr<Expr> random_expr(std::size_t ops, Rng& rng, int p) {
  auto e = std::make_unique<Expr>();
  if (ops == 0) {
    e->value = static_cast<int>(rng.uniform_int(0, p - 1));
    return e;
  }
  static constexpr char kOps[] = {'+', '-', '*', '/'};
  e->op = kOps[rng.uniform_int(0, 3)];
  const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ops - 1)));
  e->lhs = random_expr(left, rng, p);
  do {
    e->rhs = random_expr(ops - 1 - left, rng, p);
  } while (e->op == '/' && e->rhs->value == 0);
  e->value = apply_op(e->op, e->lhs->value, e->rhs->value, p);
  return e;
}

void render(const Expr& e, bool root, std::vector<std::string>& out) {
  if (e.leaf()) {
    out.push_back(std::to_string(e.value));
    return;
  }
  if (!root) out.emplace_back("(");
  render(*e.lhs, false, out);
  out.emplace_back(1, e.op);
  render(*e.rhs, false, out);
  if (!root) out.emplace_back(")");
}

// Leftmost bracketed node whose operands are both plain numbers.
Expr* innermost(Expr& e, bool root) {
  if (e.leaf()) return nullptr;
  if (!root && e.lhs->leaf() && e.rhs->leaf()) return &e;
  if (Expr* hit = innermost(*e.lhs, false)) return hit;
  return innermost(*e.rhs, false);
}

std::vector<TokenId> ids_of(const std::vector<std::string>& symbols, const Vocab& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) ids.push_back(vocab.id(s));
  return ids;
}

}  // namespace

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Multiplication: return "mult";
    case TaskKind::Arithmetic: return "arith";
    case TaskKind::Lis: return "lis";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "mult" || s == "multiplication") return TaskKind::Multiplication;
  if (s == "arith" || s == "arithmetic") return TaskKind::Arithmetic;
  if (s == "lis") return TaskKind::Lis;
  throw std::invalid_argument("unknown task '" + s + "' (expected mult, arith or lis)");
}

void DatasetSpec::validate() const {
  if (size == 0) throw std::invalid_argument("task size must be at least 1");
  if (count == 0) throw std::invalid_argument("sample count must be positive");
  if (train_fraction < 0.0 || test_fraction < 0.0 || std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
  }
  if (task == TaskKind::Multiplication && size > kMaxMultDigits) {
    throw std::invalid_argument("multiplication supports at most " + std::to_string(kMaxMultDigits) + " digits");
  }
  if (task == TaskKind::Arithmetic) {
    if (prime < 2) throw std::invalid_argument("modulus must be a prime >= 2");
    for (int q = 2; q * q <= prime; ++q) {
      if (prime % q == 0) throw std::invalid_argument("modulus " + std::to_string(prime) + " is not prime");
    }
  }
}

nlohmann::ordered_json DatasetSpec::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = to_string(task);
  j["size"] = size;
  j["count"] = count;
  j["seed"] = seed;
  j["train_fraction"] = train_fraction;
  j["test_fraction"] = test_fraction;
  if (task == TaskKind::Arithmetic) j["prime"] = prime;
  if (task == TaskKind::Multiplication) j["reverse_digits"] = reverse_digits;
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.task = task_kind_from_string(j.at("task").get<std::string>());
  s.size = j.at("size").get<std::size_t>();
  s.count = j.at("count").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_fraction = j.at("train_fraction").get<double>();
  s.test_fraction = j.at("test_fraction").get<double>();
  s.prime = j.value("prime", kDefaultPrime);
  s.reverse_digits = j.value("reverse_digits", false);
  s.validate();
  return s;
}

Vocab make_vocab(const DatasetSpec& spec) {
  switch (spec.task) {
    case TaskKind::Multiplication: {
      Vocab v;
      for (char c : std::string("0123456789*+()")) v.add(std::string(1, c));
      return v;
    }
    case TaskKind::Arithmetic: {
      Vocab v;
      for (int i = 0; i < spec.prime; ++i) v.add(std::to_string(i));
      for (const char* s : {"+", "-", "*", "/", "(", ")", "="}) v.add(s);
      return v;
    }
    case TaskKind::Lis: {
      Vocab v(" ");
      const auto top = std::max<std::size_t>(kLisMaxValue, spec.size);
      for (std::size_t i = 1; i <= top; ++i) v.add(std::to_string(i));
      return v;
    }
  }
  throw std::logic_error("unhandled task");
}

MultiplicationTrace multiplication_trace(std::uint64_t a, std::uint64_t b, std::size_t n) {
  MultiplicationTrace tr;
  std::uint64_t running = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::uint64_t digit = (b / pow10(j)) % 10;
    const std::uint64_t partial = a * digit * pow10(j);
    running += partial;
    tr.partials.push_back(padded(partial, n + 1 + j));
    if (j > 0) tr.text += "+";
    tr.text += tr.partials.back();
    if (j >= 1 && j + 1 < n) {
      tr.running_sums.push_back(padded(running, n + 1 + j));
      tr.text += "(" + tr.running_sums.back() + ")";
    }
  }
  tr.answer = padded(running, 2 * n);
  return tr;
}

std::vector<Sample> gen_multiplication(std::size_t n, std::size_t count, std::uint64_t seed, const Vocab& vocab,
                                       bool reverse_digits) {
  if (n == 0 || n > kMaxMultDigits) throw std::invalid_argument("n_digits must be in [1, 9]");
  const std::uint64_t lo = pow10(n - 1), hi = pow10(n) - 1;
  const double space = std::pow(static_cast<double>(hi - lo + 1), 2.0);
  if (static_cast<double>(count) > space) {
    throw std::invalid_argument("requested " + std::to_string(count) + " samples but only " +
                                std::to_string(static_cast<std::uint64_t>(space)) + " distinct " +
                                std::to_string(n) + "-digit pairs exist");
  }
  auto digits = [&](const std::string& s) {
    std::vector<TokenId> ids;
    for (char c : s) ids.push_back(vocab.id(std::string(1, c)));
    if (reverse_digits) std::reverse(ids.begin(), ids.end());
    return ids;
  };
  Rng rng(derive_seed(seed, kMultStream, n));
  return distinct_samples(count, rng, [&](Rng& r) {
    const auto a = static_cast<std::uint64_t>(r.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    const auto b = static_cast<std::uint64_t>(r.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    const auto tr = multiplication_trace(a, b, n);
    Sample s;
    s.input = digits(std::to_string(a));
    s.input.push_back(vocab.id("*"));
    const auto bd = digits(std::to_string(b));
    s.input.insert(s.input.end(), bd.begin(), bd.end());
    for (std::size_t j = 0; j < n; ++j) {
      if (j > 0) s.cot.push_back(vocab.id("+"));
      const auto p = digits(tr.partials[j]);
      s.cot.insert(s.cot.end(), p.begin(), p.end());
      if (j >= 1 && j + 1 < n) {
        s.cot.push_back(vocab.id("("));
        const auto rs = digits(tr.running_sums[j - 1]);
        s.cot.insert(s.cot.end(), rs.begin(), rs.end());
        s.cot.push_back(vocab.id(")"));
      }
    }
    s.cot.push_back(Vocab::kAnswerSep);
    s.answer = digits(tr.answer);
    s.meta = {{"a", a}, {"b", b}, {"product", a * b}};
    return s;
  });
}

std::vector<Sample> gen_arithmetic_expression(std::size_t n_ops, std::size_t count, std::uint64_t seed,
                                              const Vocab& vocab, int p) {
  if (n_ops == 0) throw std::invalid_argument("n_operators must be at least 1");
  Rng rng(derive_seed(seed, kArithStream, n_ops));
  return distinct_samples(count, rng, [&](Rng& r) {
    auto e = random_expr(n_ops, r, p);
    Sample s;
    std::vector<std::string> sym;
    render(*e, true, sym);
    sym.emplace_back("=");
    s.input = ids_of(sym, vocab);
    while (Expr* node = innermost(*e, true)) {
      node->op = 0;
      node->lhs.reset();
      node->rhs.reset();
      sym.clear();
      render(*e, true, sym);
      sym.emplace_back("=");
      const auto step = ids_of(sym, vocab);
      s.cot.insert(s.cot.end(), step.begin(), step.end());
    }
    s.answer = {vocab.id(std::to_string(e->value))};
    s.meta = {{"prime", p}, {"value", e->value}};
    return s;
  });
}

LisResult lis_oracle(const std::vector<int>& seq) {
  if (seq.empty()) throw std::invalid_argument("LIS of an empty sequence");
  LisResult r;
  r.dp.assign(seq.size(), 1);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (seq[j] < seq[i]) r.dp[i] = std::max(r.dp[i], r.dp[j] + 1);
    }
    r.length = std::max(r.length, r.dp[i]);
  }
  return r;
}

std::vector<Sample> gen_lis(std::size_t len, std::size_t count, std::uint64_t seed, const Vocab& vocab) {
  if (len == 0) throw std::invalid_argument("LIS sequence length must be at least 1");
  Rng rng(derive_seed(seed, kLisStream, len));
  return distinct_samples(count, rng, [&](Rng& r) {
    std::vector<int> values(len);
    for (auto& v : values) v = static_cast<int>(r.uniform_int(1, kLisMaxValue));
    const auto res = lis_oracle(values);
    Sample s;
    for (int v : values) s.input.push_back(vocab.id(std::to_string(v)));
    for (auto d : res.dp) s.cot.push_back(vocab.id(std::to_string(d)));
    s.cot.push_back(Vocab::kAnswerSep);
    s.answer = {vocab.id(std::to_string(res.length))};
    s.meta = {{"values", values}, {"dp", res.dp}, {"length", res.length}};
    return s;
  });
}

std::vector<Sample> generate(const DatasetSpec& spec, const Vocab& vocab) {
  spec.validate();
  switch (spec.task) {
    case TaskKind::Multiplication: return gen_multiplication(spec.size, spec.count, spec.seed, vocab, spec.reverse_digits);
    case TaskKind::Arithmetic: return gen_arithmetic_expression(spec.size, spec.count, spec.seed, vocab, spec.prime);
    case TaskKind::Lis: return gen_lis(spec.size, spec.count, spec.seed, vocab);
  }
  throw std::logic_error("unhandled task");
}

Dataset build_dataset(const DatasetSpec& spec) {
  Dataset ds{spec, make_vocab(spec), {}, {}};
  auto all = generate(spec, ds.vocab);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.count)));
  ds.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)));
  ds.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)), std::make_move_iterator(all.end()));
  return ds;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Cot: return "cot";
    case Variant::Pause: return "pause";
    case Variant::SeqVcr: return "seqvcr";
    case Variant::SeqVcrPause: return "seqvcr_pause";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::Vanilla, Variant::Cot, Variant::Pause, Variant::SeqVcr, Variant::SeqVcrPause}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + s + "' (expected vanilla, cot, pause, seqvcr or seqvcr_pause)");
}

Assembled assemble_sequence(const Sample& s, Variant v, std::size_t pauses, std::size_t max_len) {
  if (s.answer.empty()) throw std::invalid_argument("sample has an empty answer");
  Assembled a;
  a.tokens = s.input;
  if (uses_pause(v)) {
    a.tokens.push_back(Vocab::kPauseStart);
    a.tokens.insert(a.tokens.end(), pauses, Vocab::kPause);
    a.tokens.push_back(Vocab::kPauseEnd);
  }
  a.prompt_len = a.tokens.size();
  if (uses_cot(v)) a.tokens.insert(a.tokens.end(), s.cot.begin(), s.cot.end());
  a.answer_offset = a.tokens.size();
  a.tokens.insert(a.tokens.end(), s.answer.begin(), s.answer.end());
  if (max_len != 0 && a.tokens.size() > max_len) {
    throw std::length_error("assembled sequence has " + std::to_string(a.tokens.size()) + " tokens, limit is " +
                            std::to_string(max_len));
  }
  a.loss_mask.assign(a.tokens.size(), 0);
  for (std::size_t t = a.prompt_len; t < a.tokens.size(); ++t) a.loss_mask[t - 1] = 1;
  return a;
}

}  // namespace seqvcr
