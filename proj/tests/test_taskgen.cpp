#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "oracles.hpp"
#include "seqvcr/dataset_io.hpp"
#include "seqvcr/taskgen.hpp"

namespace seqvcr {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> symbols_of(const Vocab& v, const std::vector<TokenId>& ids) {
  std::vector<std::string> out;
  for (TokenId id : ids) out.push_back(v.symbol(id));
  return out;
}

std::string concat(const Vocab& v, const std::vector<TokenId>& ids) {
  std::string s;
  for (TokenId id : ids) s += v.symbol(id);
  return s;
}

DatasetSpec spec_for(TaskKind task, std::size_t size, std::size_t count, std::uint64_t seed) {
  DatasetSpec s;
  s.task = task;
  s.size = size;
  s.count = count;
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------- vocab

TEST(Vocab, ReservedSymbolsComeFirst) {
  const Vocab v;
  EXPECT_EQ(v.size(), Vocab::kNumReserved);
  EXPECT_EQ(v.symbol(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.symbol(Vocab::kPause), "<pause>");
  EXPECT_EQ(v.symbol(Vocab::kPauseStart), "</pause_start>");
  EXPECT_EQ(v.symbol(Vocab::kPauseEnd), "</pause_end>");
  EXPECT_EQ(v.id("####"), Vocab::kAnswerSep);
}

TEST(Vocab, RoundTripAndUnknownSymbols) {
  const Vocab v = make_vocab(spec_for(TaskKind::Multiplication, 2, 10, 0));
  EXPECT_TRUE(v.tokenize("").empty());
  EXPECT_EQ(v.detokenize(v.tokenize("12*34")), "12*34");
  EXPECT_EQ(v.tokenize("12*34").size(), 5u);
  try {
    v.tokenize("12x34");
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find('x'), std::string::npos) << e.what();
  }
  const Vocab lis = make_vocab(spec_for(TaskKind::Lis, 8, 10, 0));
  EXPECT_EQ(lis.tokenize("12 5 50").size(), 3u);
  EXPECT_EQ(lis.detokenize(lis.tokenize("12 5 50")), "12 5 50");
}

TEST(Vocab, RejectsBrokenReservedPrefix) {
  EXPECT_THROW(Vocab({"<pad>", "x"}, ""), std::invalid_argument);
  const Vocab v = make_vocab(spec_for(TaskKind::Arithmetic, 2, 10, 0));
  EXPECT_EQ(Vocab(v.symbols(), v.separator()), v);
}

// ---------------------------------------------------------------- multiplication

TEST(Multiplication, HandExamples) {
  const auto t = multiplication_trace(12345, 67890, 5);
  EXPECT_EQ(t.answer, "0838102050");
  EXPECT_EQ(multiplication_trace(1, 1, 1).answer, "01");
  const auto two = multiplication_trace(74, 40, 2);
  EXPECT_EQ(two.text, "000+2960");
}

TEST(Multiplication, SamplesMatchBigIntegerOracle) {
  for (std::size_t n : {2u, 3u, 5u, 9u}) {
    const DatasetSpec spec = spec_for(TaskKind::Multiplication, n, 300, 7 + n);
    const Vocab v = make_vocab(spec);
    const auto samples = generate(spec, v);
    std::set<std::string> inputs;
    for (const auto& s : samples) {
      const std::string in = concat(v, s.input);
      EXPECT_TRUE(inputs.insert(in).second) << "duplicate " << in;
      const auto star = in.find('*');
      ASSERT_NE(star, std::string::npos);
      const std::string a = in.substr(0, star), b = in.substr(star + 1);
      ASSERT_EQ(a.size(), n);
      ASSERT_EQ(b.size(), n);
      EXPECT_NE(a[0], '0');
      EXPECT_NE(b[0], '0');
      const std::string product = oracle::multiply_decimal(a, b);
      EXPECT_EQ(concat(v, s.answer), oracle::pad_left(product, 2 * n));
      EXPECT_EQ(s.answer.size(), 2 * n);
      EXPECT_EQ(s.meta["product"].get<std::uint64_t>(), std::stoull(product));

      // Trace: partial j is a·b_j·10^j; running sums are prefix sums.
      std::string cot = concat(v, s.cot);
      ASSERT_GE(cot.size(), 4u);
      EXPECT_EQ(cot.substr(cot.size() - 4), "####");
      cot.resize(cot.size() - 4);
      std::string running = "0";
      std::size_t j = 0, pos = 0;
      while (pos <= cot.size()) {
        const auto plus = cot.find('+', pos);
        std::string piece = cot.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos);
        std::string shown_sum;
        if (const auto paren = piece.find('('); paren != std::string::npos) {
          shown_sum = piece.substr(paren + 1, piece.size() - paren - 2);
          piece.resize(paren);
        }
        const std::string digit(1, b[n - 1 - j]);
        const std::string expected = oracle::multiply_decimal(a, digit) + std::string(j, '0');
        EXPECT_EQ(piece, oracle::pad_left(expected, n + 1 + j)) << in << " partial " << j;
        running = oracle::add_decimal(running, piece);
        if (!shown_sum.empty()) EXPECT_EQ(oracle::strip_zeros(shown_sum), oracle::strip_zeros(running));
        ++j;
        if (plus == std::string::npos) break;
        pos = plus + 1;
      }
      EXPECT_EQ(j, n);
      EXPECT_EQ(oracle::strip_zeros(running), oracle::strip_zeros(product));
    }
  }
}

TEST(Multiplication, TokenCountsForFiveDigits) {
  const DatasetSpec spec = spec_for(TaskKind::Multiplication, 5, 50, 3);
  const Vocab v = make_vocab(spec);
  for (const auto& s : generate(spec, v)) {
    EXPECT_EQ(s.input.size(), 11u);
    EXPECT_EQ(s.cot.size(), 75u);
    EXPECT_EQ(s.answer.size(), 10u);
    const auto paused = assemble_sequence(s, Variant::Pause, 2);
    EXPECT_EQ(paused.tokens.size(), 11u + 4u + 10u);
    EXPECT_EQ(assemble_sequence(s, Variant::Cot, 0).tokens.size(), 11u + 75u + 10u);
  }
}

TEST(Multiplication, PairSpaceLimit) {
  const Vocab v = make_vocab(spec_for(TaskKind::Multiplication, 1, 1, 0));
  EXPECT_EQ(gen_multiplication(1, 81, 1, v).size(), 81u);
  EXPECT_THROW(gen_multiplication(1, 82, 1, v), std::invalid_argument);
}

TEST(Multiplication, ReversedDigitsAreMirrored) {
  DatasetSpec spec = spec_for(TaskKind::Multiplication, 3, 20, 5);
  const Vocab v = make_vocab(spec);
  const auto plain = gen_multiplication(3, 20, 5, v, false);
  const auto rev = gen_multiplication(3, 20, 5, v, true);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    auto a = concat(v, plain[i].answer);
    std::reverse(a.begin(), a.end());
    EXPECT_EQ(concat(v, rev[i].answer), a);
  }
}

// ---------------------------------------------------------------- arithmetic

std::vector<std::vector<std::string>> split_on_equals(const std::vector<std::string>& toks) {
  std::vector<std::vector<std::string>> out(1);
  for (const auto& t : toks) {
    if (t == "=") out.emplace_back();
    else out.back().push_back(t);
  }
  if (out.back().empty()) out.pop_back();
  return out;
}

TEST(Arithmetic, EvaluatorHandExamples) {
  EXPECT_EQ(oracle::ModularEvaluator({"(", "2", "+", "3", ")", "*", "4"}, 23).evaluate(), 20);
  EXPECT_EQ(oracle::ModularEvaluator({"7"}, 23).evaluate(), 7);
  EXPECT_EQ(oracle::ModularEvaluator({"1", "/", "2"}, 23).evaluate(), 12);
  EXPECT_EQ(oracle::ModularEvaluator({"3", "-", "5"}, 23).evaluate(), 21);
}

TEST(Arithmetic, SamplesMatchIndependentEvaluator) {
  for (std::size_t ops : {1u, 3u, 6u}) {
    const DatasetSpec spec = spec_for(TaskKind::Arithmetic, ops, 300, 11 + ops);
    const Vocab v = make_vocab(spec);
    for (const auto& s : generate(spec, v)) {
      const auto in = symbols_of(v, s.input);
      ASSERT_EQ(in.back(), "=");
      const auto expr = split_on_equals(in);
      ASSERT_EQ(expr.size(), 1u);
      std::size_t n_ops = 0;
      for (const auto& t : expr[0]) n_ops += t == "+" || t == "-" || t == "*" || t == "/";
      EXPECT_EQ(n_ops, ops);
      const std::int64_t value = oracle::ModularEvaluator(expr[0], 23).evaluate();
      ASSERT_EQ(s.answer.size(), 1u);
      EXPECT_EQ(std::stoll(v.symbol(s.answer[0])), value);
      EXPECT_EQ(s.meta["value"].get<std::int64_t>(), value);

      // Every trace step has one fewer operator and the same value.
      const auto steps = split_on_equals(symbols_of(v, s.cot));
      EXPECT_EQ(steps.size(), ops - 1);
      std::size_t prev_ops = ops;
      for (const auto& step : steps) {
        std::size_t k = 0;
        for (const auto& t : step) k += t == "+" || t == "-" || t == "*" || t == "/";
        EXPECT_EQ(k + 1, prev_ops);
        prev_ops = k;
        EXPECT_EQ(oracle::ModularEvaluator(step, 23).evaluate(), value);
      }
    }
  }
}

TEST(Arithmetic, OtherPrimes) {
  DatasetSpec spec = spec_for(TaskKind::Arithmetic, 4, 100, 2);
  spec.prime = 31;
  const Vocab v = make_vocab(spec);
  for (const auto& s : generate(spec, v)) {
    const auto expr = split_on_equals(symbols_of(v, s.input));
    EXPECT_EQ(std::stoll(v.symbol(s.answer[0])), oracle::ModularEvaluator(expr[0], 31).evaluate());
  }
  spec.prime = 21;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------- LIS

TEST(Lis, HandExamples) {
  EXPECT_EQ(lis_oracle({1, 2, 3}).length, 3u);
  EXPECT_EQ(lis_oracle({5, 5, 5}).length, 1u);
  const auto r = lis_oracle({3, 1, 2});
  EXPECT_EQ(r.dp, (std::vector<std::size_t>{1, 1, 2}));
  EXPECT_EQ(r.length, 2u);
  EXPECT_EQ(lis_oracle({9, 7, 4, 2}).length, 1u);
  EXPECT_THROW(lis_oracle({}), std::invalid_argument);
}

TEST(Lis, SamplesAgreeWithPatienceSorting) {
  const DatasetSpec spec = spec_for(TaskKind::Lis, 30, 300, 4);
  const Vocab v = make_vocab(spec);
  for (const auto& s : generate(spec, v)) {
    std::vector<int> values;
    for (TokenId id : s.input) values.push_back(std::stoi(v.symbol(id)));
    ASSERT_EQ(values.size(), 30u);
    for (int x : values) {
      EXPECT_GE(x, 1);
      EXPECT_LE(x, kLisMaxValue);
    }
    const std::size_t len = oracle::lis_patience(values);
    EXPECT_EQ(lis_oracle(values).length, len);
    EXPECT_EQ(std::stoul(v.symbol(s.answer[0])), len);
    ASSERT_EQ(s.cot.size(), 31u);
    EXPECT_EQ(s.cot.back(), Vocab::kAnswerSep);
  }
}

// ---------------------------------------------------------------- datasets

TEST(Dataset, SplitsAreDisjointAndSized) {
  DatasetSpec spec = spec_for(TaskKind::Multiplication, 3, 500, 9);
  spec.train_fraction = 0.8;
  spec.test_fraction = 0.2;
  const Dataset ds = build_dataset(spec);
  EXPECT_EQ(ds.train.size(), 400u);
  EXPECT_EQ(ds.test.size(), 100u);
  std::set<std::vector<TokenId>> train_inputs;
  for (const auto& s : ds.train) train_inputs.insert(s.input);
  for (const auto& s : ds.test) EXPECT_FALSE(train_inputs.count(s.input));
}

TEST(Dataset, SpecValidationAndJson) {
  DatasetSpec spec = spec_for(TaskKind::Lis, 8, 10, 1);
  EXPECT_EQ(DatasetSpec::from_json(spec.to_json()), spec);
  spec.train_fraction = 0.7;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(TaskKind::Lis, 0, 10, 1).validate(), std::invalid_argument);
  EXPECT_THROW(spec_for(TaskKind::Lis, 3, 0, 1).validate(), std::invalid_argument);
  EXPECT_THROW(task_kind_from_string("sort"), std::invalid_argument);
}

TEST(Dataset, AssembleLayoutsAndMasks) {
  const DatasetSpec spec = spec_for(TaskKind::Multiplication, 2, 5, 1);
  const Vocab v = make_vocab(spec);
  const Sample s = generate(spec, v).front();
  const auto van = assemble_sequence(s, Variant::Vanilla, 0);
  EXPECT_EQ(van.tokens.size(), 5u + 4u);
  EXPECT_EQ(van.prompt_len, 5u);
  EXPECT_EQ(van.answer_offset, 5u);
  // Predictions made at positions 4..7 target the four answer digits.
  EXPECT_EQ(van.loss_mask, (std::vector<unsigned char>{0, 0, 0, 0, 1, 1, 1, 1, 0}));

  const auto pause = assemble_sequence(s, Variant::SeqVcrPause, 2);
  EXPECT_EQ(pause.tokens[5], Vocab::kPauseStart);
  EXPECT_EQ(pause.tokens[6], Vocab::kPause);
  EXPECT_EQ(pause.tokens[7], Vocab::kPause);
  EXPECT_EQ(pause.tokens[8], Vocab::kPauseEnd);
  EXPECT_EQ(pause.prompt_len, 9u);
  for (std::size_t t = 0; t + 1 < pause.tokens.size(); ++t) {
    const TokenId target = pause.tokens[t + 1];
    if (target == Vocab::kPause || target == Vocab::kPauseStart || target == Vocab::kPauseEnd) {
      EXPECT_EQ(pause.loss_mask[t], 0);
    }
  }
  const auto empty_frame = assemble_sequence(s, Variant::Pause, 0);
  EXPECT_EQ(empty_frame.tokens.size(), van.tokens.size() + 2);

  const auto cot = assemble_sequence(s, Variant::Cot, 0);
  std::size_t supervised = 0;
  for (auto m : cot.loss_mask) supervised += m;
  EXPECT_EQ(supervised, s.cot.size() + s.answer.size());
  EXPECT_THROW(assemble_sequence(s, Variant::Cot, 0, 10), std::length_error);
}

class DatasetIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("seqvcr_io_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(DatasetIo, RoundTripIsExactAndDeterministic) {
  for (TaskKind task : {TaskKind::Multiplication, TaskKind::Arithmetic, TaskKind::Lis}) {
    const Dataset ds = build_dataset(spec_for(task, 3, 60, 17));
    write_dataset(dir_ / "a", ds);
    write_dataset(dir_ / "b", build_dataset(spec_for(task, 3, 60, 17)));
    for (const char* f : {"train.jsonl", "test.jsonl", "manifest.json"}) {
      EXPECT_EQ(sha256_file(dir_ / "a" / f), sha256_file(dir_ / "b" / f)) << f;
    }
    const Dataset back = read_dataset(dir_ / "a");
    EXPECT_EQ(back.spec, ds.spec);
    EXPECT_EQ(back.vocab, ds.vocab);
    ASSERT_EQ(back.train.size(), ds.train.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
      EXPECT_EQ(back.train[i].input, ds.train[i].input);
      EXPECT_EQ(back.train[i].cot, ds.train[i].cot);
      EXPECT_EQ(back.train[i].answer, ds.train[i].answer);
      EXPECT_EQ(back.train[i].meta, ds.train[i].meta);
    }
    fs::remove_all(dir_);
  }
}

TEST_F(DatasetIo, RefusesOverwriteAndDetectsTampering) {
  const Dataset ds = build_dataset(spec_for(TaskKind::Lis, 5, 20, 1));
  write_dataset(dir_, ds);
  EXPECT_THROW(write_dataset(dir_, ds), std::runtime_error);
  EXPECT_NO_THROW(write_dataset(dir_, ds, true));
  {
    std::ofstream f(dir_ / "train.jsonl", std::ios::app);
    f << "\n";
  }
  EXPECT_THROW(read_dataset(dir_), std::runtime_error);
}

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace seqvcr
