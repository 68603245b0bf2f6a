#include <gtest/gtest.h>

#include <sstream>

#include "seqvcr/eval.hpp"

namespace seqvcr {
namespace {

struct Fixture {
  Dataset ds;
  Transformer model;
};

Fixture make_fixture(std::size_t digits, std::size_t count) {
  DatasetSpec spec;
  spec.task = TaskKind::Multiplication;
  spec.size = digits;
  spec.count = count;
  spec.seed = 2;
  Fixture f{build_dataset(spec), {}};
  ModelConfig mc;
  mc.vocab_size = f.ds.vocab.size();
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.max_seq_len = 128;
  f.model = Transformer(mc, 9);
  return f;
}

TEST(Eval, OperationCountsForTwoDigits) {
  const auto ops = operation_count_annotation(2);
  ASSERT_EQ(ops.size(), 3u);
  EXPECT_EQ(ops[0].multiplications, 1u);
  EXPECT_EQ(ops[0].additions, 0u);
  EXPECT_EQ(ops[1].multiplications, 2u);
  EXPECT_EQ(ops[1].additions, 2u);
  EXPECT_EQ(ops[2].multiplications, 1u);
  EXPECT_EQ(ops[2].additions, 1u);
  EXPECT_EQ(ops[1].total(), 4u);
}

TEST(Eval, OperationCountsPeakInTheMiddle) {
  const auto ops = operation_count_annotation(5);
  ASSERT_EQ(ops.size(), 9u);
  std::size_t mults = 0;
  for (const auto& c : ops) mults += c.multiplications;
  EXPECT_EQ(mults, 25u);
  EXPECT_EQ(ops[4].multiplications, 5u);
  EXPECT_THROW(operation_count_annotation(0), std::invalid_argument);
}

TEST(Eval, DecodeLengths) {
  const auto f = make_fixture(5, 4);
  const Sample& s = f.ds.train.front();
  EXPECT_EQ(decode_length(s, Variant::Cot), 85u);
  EXPECT_EQ(decode_length(s, Variant::Pause), 10u);
  EXPECT_EQ(decode_length(s, Variant::Vanilla), 10u);
}

TEST(Eval, DecodedAnswersHaveAnswerLength) {
  const auto f = make_fixture(2, 30);
  for (Variant v : {Variant::Vanilla, Variant::Cot, Variant::SeqVcrPause}) {
    const DecodeOptions opt{v, uses_pause(v) ? 2u : 0u, 7};
    const auto out = decode_answers(f.model, f.ds.train, opt);
    ASSERT_EQ(out.size(), f.ds.train.size());
    for (const auto& a : out) EXPECT_EQ(a.size(), 4u);
  }
}

// Batching only groups equal-length prompts; answers must not depend on it.
TEST(Eval, DecodingIsIndependentOfBatchSize) {
  const auto f = make_fixture(2, 30);
  const auto a = decode_answers(f.model, f.ds.train, {Variant::Pause, 2, 1});
  const auto b = decode_answers(f.model, f.ds.train, {Variant::Pause, 2, 64});
  EXPECT_EQ(a, b);
}

TEST(Eval, PositionAccuracyIsConsistent) {
  const auto f = make_fixture(2, 40);
  const DecodeOptions opt{Variant::Vanilla, 0, 16};
  const auto acc = position_accuracy(f.model, f.ds.train, opt);
  ASSERT_EQ(acc.teacher_forced.size(), 4u);
  // The first answer token sees the same context either way.
  EXPECT_EQ(acc.teacher_forced[0], acc.free_running[0]);
  EXPECT_EQ(acc.exact_match, exact_match(f.model, f.ds.train, opt));
  for (double x : acc.free_running) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(Eval, PositionAccuracyNeedsAlignedAnswers) {
  auto f = make_fixture(2, 10);
  f.ds.train[0].answer.pop_back();
  EXPECT_THROW(position_accuracy(f.model, f.ds.train, {}), std::invalid_argument);
  EXPECT_THROW(exact_match(f.model, {}, {}), std::invalid_argument);
}

TEST(Eval, ThroughputCountsDecodedTokens) {
  const auto f = make_fixture(5, 4);
  const auto pause = measure_throughput(f.model, f.ds.train, {Variant::Pause, 2, 1}, 3, 1, 3);
  const auto cot = measure_throughput(f.model, f.ds.train, {Variant::Cot, 0, 1}, 3, 1, 3);
  EXPECT_EQ(pause.tokens_decoded_per_example, 14.0);
  EXPECT_EQ(cot.tokens_decoded_per_example, 85.0);
  EXPECT_EQ(pause.trial_rates.size(), 3u);
  EXPECT_GT(pause.examples_per_sec, 0.0);
  EXPECT_DOUBLE_EQ(normalized_throughput(6.0, 3.0), 2.0);
  EXPECT_THROW(normalized_throughput(1.0, 0.0), std::invalid_argument);
}

TEST(Eval, CsvLayouts) {
  EvalReport r;
  r.run_id = "r1";
  r.variant = "pause";
  r.n_examples = 2;
  r.accuracy.teacher_forced = {1.0, 0.5, 0.5, 0.25};
  r.accuracy.free_running = {1.0, 0.5, 0.0, 0.0};
  r.accuracy.exact_match = 0.0;
  r.throughput.tokens_decoded_per_example = 14;
  r.throughput.examples_per_sec = 100;
  std::ostringstream rep;
  write_report_csv(rep, r);
  EXPECT_EQ(rep.str(),
            "run_id,variant,n_examples,exact_match,tokens_decoded_per_example,throughput_examples_per_sec,t_norm\n"
            "r1,pause,2,0,14,100,\n");
  std::ostringstream pos;
  write_positions_csv(pos, r, operation_count_annotation(2));
  EXPECT_EQ(pos.str(),
            "position,teacher_forced_accuracy,free_running_accuracy,column,multiplications,additions,total_ops\n"
            "0,1,1,,,,\n"
            "1,0.5,0.5,2,1,1,2\n"
            "2,0.5,0,1,2,2,4\n"
            "3,0.25,0,0,1,0,1\n");
}

}  // namespace
}  // namespace seqvcr
