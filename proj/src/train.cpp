#include "seqvcr/train.hpp"

#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "seqvcr/eval.hpp"
#include "seqvcr/rng.hpp"

namespace seqvcr {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4450;

bool is_pause_frame(TokenId t) {
  return t == Vocab::kPause || t == Vocab::kPauseStart || t == Vocab::kPauseEnd;
}

std::size_t min_batch(const TrainConfig& cfg) { return cfg.reg.enabled() ? 2 : 1; }

}  // namespace

void MetricsLog::write_header(std::ostream& out) {
  out << "step,epoch,loss_total,loss_next,loss_seqvcr,eval_exact_match\n";
}

void MetricsLog::write_row(std::ostream& out, const MetricsRow& r) {
  const auto prec = out.precision(17);
  out << r.step << ',' << r.epoch << ',' << r.loss_total << ',' << r.loss_next << ',' << r.loss_seqvcr << ','
      << r.eval_exact_match << '\n';
  out.precision(prec);
}

void MetricsLog::write_csv(std::ostream& out) const {
  write_header(out);
  for (const auto& r : rows) write_row(out, r);
}

std::vector<MetricsRow> MetricsLog::read_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    MetricsRow r;
    char c1, c2, c3, c4, c5;
    if (!(ls >> r.step >> c1 >> r.epoch >> c2 >> r.loss_total >> c3 >> r.loss_next >> c4 >> r.loss_seqvcr >> c5 >>
          r.eval_exact_match)) {
      throw std::runtime_error("malformed metrics row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

std::string checkpoint_name(std::size_t step) { return "step_" + std::to_string(step) + ".ckpt"; }

std::size_t steps_per_epoch(std::size_t n, const TrainConfig& cfg) {
  const std::size_t full = n / cfg.batch_size;
  const std::size_t rest = n % cfg.batch_size;
  return full + (rest >= min_batch(cfg) ? 1 : 0);
}

TrainBatch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices, const TrainConfig& cfg) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  std::vector<Assembled> seqs;
  std::size_t len = 0;
  for (auto i : indices) {
    seqs.push_back(assemble_sequence(samples.at(i), cfg.variant, cfg.pauses, cfg.model.max_seq_len));
    len = std::max(len, seqs.back().tokens.size());
  }
  TrainBatch b;
  b.inputs = TokenBatch{seqs.size(), len, std::vector<TokenId>(seqs.size() * len, Vocab::kPad)};
  b.targets.assign(seqs.size() * len, Vocab::kPad);
  b.loss_mask.assign(seqs.size() * len, 0);
  b.position_mask.assign(seqs.size() * len, 0);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& a = seqs[s];
    for (std::size_t t = 0; t < a.tokens.size(); ++t) {
      const std::size_t at = s * len + t;
      b.inputs.tokens[at] = a.tokens[t];
      if (t + 1 < a.tokens.size()) {
        b.targets[at] = a.tokens[t + 1];
        b.loss_mask[at] = a.loss_mask[t];
      }
      b.position_mask[at] = cfg.reg.include_pause_positions || !is_pause_frame(a.tokens[t]);
    }
  }
  return b;
}

TrainResult train(const TrainConfig& cfg_in, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                  std::size_t vocab_size, const TrainOptions& opt) {
  TrainConfig cfg = cfg_in;
  cfg.model.vocab_size = vocab_size;
  cfg.validate();
  cfg.model.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");

  TrainResult res;
  if (opt.resume) {
    if (!(opt.resume->model_config == cfg.model)) throw std::invalid_argument("checkpoint model config differs from the run config");
    res.model = restore_model(*opt.resume);
    res.adam = opt.resume->adam;
    res.trainer = opt.resume->trainer;
  } else {
    res.model = Transformer(cfg.model, cfg.seed);
    res.adam = AdamState::zeros_like(res.model.parameters());
  }
  res.model.set_requires_grad(true);

  const std::vector<Sample> eval_slice(eval_set.begin(),
                                       eval_set.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.eval_size, eval_set.size())));
  const DecodeOptions dec{cfg.variant, cfg.pauses, 64};
  auto evaluate = [&] {
    if (eval_slice.empty()) return;
    res.trainer.last_eval = exact_match(res.model, eval_slice, dec);
    res.trainer.has_eval = true;
  };
  if (!opt.resume) evaluate();

  const std::size_t n = train_set.size();
  const std::size_t spe = steps_per_epoch(n, cfg);
  if (spe == 0) throw std::invalid_argument("training set too small for one batch");
  std::size_t total = cfg.epochs * spe;
  if (cfg.max_steps > 0) total = cfg.epochs > 0 ? std::min(total, cfg.max_steps) : cfg.max_steps;

  const bool reg_on = cfg.reg.enabled();
  const std::string config_text = cfg.to_text();
  const auto started = std::chrono::steady_clock::now();
  auto save = [&](const std::string& name) {
    if (opt.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(opt.checkpoint_dir);
    const auto path = opt.checkpoint_dir / name;
    save_checkpoint(path, res.model, res.adam, config_text, res.trainer);
    if (opt.hooks.on_checkpoint) opt.hooks.on_checkpoint(res.trainer.step, path);
  };

  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  auto& tr = res.trainer;
  while (tr.step < total) {
    const std::size_t step = tr.step;
    const std::size_t epoch = step / spe;
    if (epoch != perm_epoch) {
      perm = Rng(derive_seed(cfg.seed, kShuffleStream, epoch)).permutation(n);
      perm_epoch = epoch;
    }
    const std::size_t b = step % spe;
    const std::size_t lo = b * cfg.batch_size;
    const std::size_t hi = std::min(n, lo + cfg.batch_size);
    const TrainBatch batch = make_batch(train_set, std::span(perm).subspan(lo, hi - lo), cfg);

    ad::Tape tape;
    ForwardOptions fo;
    fo.with_projection = reg_on;
    fo.train_mode = true;
    fo.projection_layer = cfg.reg.reg_layer;
    fo.dropout_seed = derive_seed(cfg.seed, kDropoutStream, step);
    const auto fr = res.model.forward(tape, batch.inputs, fo);
    const auto terms = total_loss(tape, fr.logits, batch.targets, batch.loss_mask, fr.projected, batch.inputs.n_seq,
                                  batch.inputs.seq_len, batch.position_mask, cfg.reg);
    const double loss = tape.value(terms.total).item();
    if (!std::isfinite(loss)) {
      throw TrainingAborted(step + 1, "non-finite loss at step " + std::to_string(step + 1) +
                                          " (next=" + std::to_string(terms.next) + ", reg=" + std::to_string(terms.seqvcr) + ")");
    }
    res.model.zero_grad();
    tape.backward(terms.total);
    clip_grad_norm(res.model.parameters(), cfg.grad_clip);
    adamw_step(res.model.parameters(), res.adam, cfg.adamw());

    tr.step = step + 1;
    tr.window_total += terms.next + terms.seqvcr;
    tr.window_next += terms.next;
    tr.window_reg += terms.seqvcr;
    ++tr.window_count;

    const bool last = tr.step == total;
    if ((cfg.eval_every > 0 && tr.step % cfg.eval_every == 0) || last) evaluate();
    if ((tr.step % cfg.log_every == 0 || last) && tr.window_count > 0) {
      const double c = static_cast<double>(tr.window_count);
      MetricsRow row{tr.step, step / spe + 1, tr.window_total / c, tr.window_next / c, tr.window_reg / c,
                     tr.has_eval ? tr.last_eval : 0.0};
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      res.log.rows.push_back(row);
      res.log.wall_seconds.push_back(secs);
      if (opt.hooks.on_row) opt.hooks.on_row(row, secs);
      tr.window_total = tr.window_next = tr.window_reg = 0.0;
      tr.window_count = 0;
    }
    if (cfg.checkpoint_every > 0 && tr.step % cfg.checkpoint_every == 0 && !last) save(checkpoint_name(tr.step));
    if (opt.stop_after > 0 && tr.step == opt.stop_after && !last) {
      if (!(cfg.checkpoint_every > 0 && tr.step % cfg.checkpoint_every == 0)) save(checkpoint_name(tr.step));
      res.model.set_requires_grad(false);
      return res;
    }
  }
  save("final.ckpt");
  res.model.set_requires_grad(false);
  res.completed = true;
  return res;
}

}  // namespace seqvcr
