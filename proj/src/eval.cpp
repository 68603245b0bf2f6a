#include "seqvcr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <ostream>
#include <stdexcept>

namespace seqvcr {

namespace {

using Groups = std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>;

void require_nonempty(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluation set is empty");
}

std::size_t uniform_answer_length(const std::vector<Sample>& samples) {
  const std::size_t len = samples.front().answer.size();
  for (const auto& s : samples) {
    if (s.answer.size() != len) throw std::invalid_argument("answers differ in length; position accuracy needs aligned answers");
  }
  return len;
}

TokenId argmax_row(std::span<const double> logits, std::size_t row, std::size_t vocab) {
  const double* p = &logits[row * vocab];
  return static_cast<TokenId>(std::max_element(p, p + vocab) - p);
}

}  // namespace

std::size_t decode_length(const Sample& s, Variant v) { return (uses_cot(v) ? s.cot.size() : 0) + s.answer.size(); }

std::vector<std::vector<TokenId>> decode_answers(const Transformer& model, const std::vector<Sample>& samples,
                                                 const DecodeOptions& opt) {
  if (opt.batch_size == 0) throw std::invalid_argument("decode batch size must be positive");
  std::vector<std::vector<TokenId>> prompts(samples.size());
  Groups groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto a = assemble_sequence(samples[i], opt.variant, opt.pauses);
    prompts[i].assign(a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(a.prompt_len));
    groups[{a.prompt_len, decode_length(samples[i], opt.variant)}].push_back(i);
  }
  std::vector<std::vector<TokenId>> out(samples.size());
  for (const auto& [key, idx] : groups) {
    for (std::size_t start = 0; start < idx.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(idx.size(), start + opt.batch_size);
      std::vector<std::vector<TokenId>> batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(prompts[idx[k]]);
      auto gen = model.generate_batch(batch, key.second);
      for (std::size_t k = start; k < stop; ++k) {
        auto& g = gen[k - start];
        const std::size_t alen = samples[idx[k]].answer.size();
        out[idx[k]].assign(g.end() - static_cast<std::ptrdiff_t>(std::min(alen, g.size())), g.end());
      }
    }
  }
  return out;
}

double exact_match(const Transformer& model, const std::vector<Sample>& samples, const DecodeOptions& opt) {
  require_nonempty(samples);
  const auto decoded = decode_answers(model, samples, opt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hits += decoded[i] == samples[i].answer;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

PositionAccuracy position_accuracy(const Transformer& model, const std::vector<Sample>& samples,
                                   const DecodeOptions& opt) {
  require_nonempty(samples);
  const std::size_t alen = uniform_answer_length(samples);
  const std::size_t vocab = model.config().vocab_size;
  PositionAccuracy acc;
  acc.teacher_forced.assign(alen, 0.0);
  acc.free_running.assign(alen, 0.0);

  std::vector<Assembled> seqs;
  Groups groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    seqs.push_back(assemble_sequence(samples[i], opt.variant, opt.pauses, model.config().max_seq_len));
    groups[{seqs.back().tokens.size(), 0}].push_back(i);
  }
  for (const auto& [key, idx] : groups) {
    const std::size_t len = key.first;
    for (std::size_t start = 0; start < idx.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(idx.size(), start + opt.batch_size);
      TokenBatch batch{stop - start, len, {}};
      for (std::size_t k = start; k < stop; ++k) {
        batch.tokens.insert(batch.tokens.end(), seqs[idx[k]].tokens.begin(), seqs[idx[k]].tokens.end());
      }
      ad::Tape tape(false);
      const auto r = model.forward(tape, batch, ForwardOptions{});
      const auto lv = tape.value(r.logits).values();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& a = seqs[idx[k]];
        for (std::size_t p = 0; p < alen; ++p) {
          const std::size_t t = a.answer_offset + p;
          acc.teacher_forced[p] += argmax_row(lv, (k - start) * len + t - 1, vocab) == a.tokens[t];
        }
      }
    }
  }

  const auto decoded = decode_answers(model, samples, opt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t p = 0; p < alen && p < decoded[i].size(); ++p) acc.free_running[p] += decoded[i][p] == samples[i].answer[p];
    hits += decoded[i] == samples[i].answer;
  }
  const double n = static_cast<double>(samples.size());
  for (auto& v : acc.teacher_forced) v /= n;
  for (auto& v : acc.free_running) v /= n;
  acc.exact_match = static_cast<double>(hits) / n;
  return acc;
}

std::vector<ColumnOps> operation_count_annotation(std::size_t n) {
  if (n == 0) throw std::invalid_argument("n_digits must be at least 1");
  std::vector<ColumnOps> cols(2 * n - 1);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    cols[c].column = c;
    cols[c].multiplications = std::min(c, 2 * n - 2 - c) + 1;
    cols[c].additions = cols[c].multiplications - 1 + (c > 0 ? 1 : 0);
  }
  return cols;
}

Throughput measure_throughput(const Transformer& model, const std::vector<Sample>& samples, const DecodeOptions& opt,
                              std::size_t generations, std::size_t warmup, std::size_t trials) {
  require_nonempty(samples);
  if (generations == 0 || trials == 0) throw std::invalid_argument("throughput needs at least one timed generation");
  std::vector<std::vector<TokenId>> prompts;
  std::vector<std::size_t> lengths;
  double decoded = 0.0;
  for (const auto& s : samples) {
    const auto a = assemble_sequence(s, opt.variant, opt.pauses);
    prompts.emplace_back(a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(a.prompt_len));
    lengths.push_back(decode_length(s, opt.variant));
    decoded += static_cast<double>(a.tokens.size() - s.input.size());
  }
  Throughput tp;
  tp.tokens_decoded_per_example = decoded / static_cast<double>(samples.size());
  std::size_t cursor = 0;
  auto run = [&](std::size_t count) {
    for (std::size_t g = 0; g < count; ++g, cursor = (cursor + 1) % prompts.size()) {
      (void)model.generate(prompts[cursor], lengths[cursor]);
    }
  };
  run(warmup);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    run(generations);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    tp.trial_rates.push_back(static_cast<double>(generations) / dt.count());
  }
  auto sorted = tp.trial_rates;
  std::sort(sorted.begin(), sorted.end());
  tp.examples_per_sec = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  return tp;
}

double normalized_throughput(double target, double base) {
  if (!(base > 0.0)) throw std::invalid_argument("baseline throughput must be positive");
  return target / base;
}

void write_report_csv(std::ostream& out, const EvalReport& r) {
  const auto prec = out.precision(17);
  out << "run_id,variant,n_examples,exact_match,tokens_decoded_per_example,throughput_examples_per_sec,t_norm\n";
  out << r.run_id << ',' << r.variant << ',' << r.n_examples << ',' << r.accuracy.exact_match << ','
      << r.throughput.tokens_decoded_per_example << ',' << r.throughput.examples_per_sec << ',';
  if (r.t_norm) out << *r.t_norm;
  out << '\n';
  out.precision(prec);
}

void write_positions_csv(std::ostream& out, const EvalReport& r, const std::vector<ColumnOps>& ops,
                         bool reversed_digits) {
  const auto prec = out.precision(17);
  const std::size_t alen = r.accuracy.teacher_forced.size();
  out << "position,teacher_forced_accuracy,free_running_accuracy";
  if (!ops.empty()) out << ",column,multiplications,additions,total_ops";
  out << '\n';
  for (std::size_t p = 0; p < alen; ++p) {
    out << p << ',' << r.accuracy.teacher_forced[p] << ',' << r.accuracy.free_running[p];
    if (!ops.empty()) {
      const std::size_t column = reversed_digits ? p : alen - 1 - p;
      if (column < ops.size()) {
        const auto& c = ops[column];
        out << ',' << c.column << ',' << c.multiplications << ',' << c.additions << ',' << c.total();
      } else {
        out << ",,,,";
      }
    }
    out << '\n';
  }
  out.precision(prec);
}

}  // namespace seqvcr
