#include "seqvcr/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "seqvcr/rng.hpp"

namespace seqvcr {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || max_seq_len == 0) {
    throw std::invalid_argument("model config: vocab_size, d_model, n_heads and max_seq_len must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("model config: dropout must be in [0, 1)");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, v = c.vocab_size, p = c.projection_width();
  return v * d + c.max_seq_len * d + c.n_layers * (12 * d * d + 13 * d) + 2 * d + d * v + v + d * p + p;
}

TokenBatch TokenBatch::single(std::span<const TokenId> seq) {
  return TokenBatch{1, seq.size(), std::vector<TokenId>(seq.begin(), seq.end())};
}

std::size_t Transformer::add_param(std::string name, Tensor t) {
  params_.push_back(Parameter{std::move(name), std::move(t)});
  return params_.size() - 1;
}

Transformer::Transformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0x1417));
  const std::size_t d = cfg_.d_model, v = cfg_.vocab_size, p = cfg_.projection_width();
  auto normal = [&](Shape s) {
    Tensor t(std::move(s));
    for (double& x : t.values()) x = rng.normal(0.0, 0.02);
    return t;
  };
  auto zeros = [](std::size_t n) { return Tensor(Shape{n}, 0.0); };
  auto ones = [](std::size_t n) { return Tensor(Shape{n}, 1.0); };

  tok_emb_ = add_param("tok_emb", normal({v, d}));
  pos_emb_ = add_param("pos_emb", normal({cfg_.max_seq_len, d}));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    BlockIndex b{};
    b.ln1_gain = add_param(pre + "ln1.gain", ones(d));
    b.ln1_bias = add_param(pre + "ln1.bias", zeros(d));
    b.qkv_w = add_param(pre + "attn.qkv.weight", normal({d, 3 * d}));
    b.qkv_b = add_param(pre + "attn.qkv.bias", zeros(3 * d));
    b.out_w = add_param(pre + "attn.out.weight", normal({d, d}));
    b.out_b = add_param(pre + "attn.out.bias", zeros(d));
    b.ln2_gain = add_param(pre + "ln2.gain", ones(d));
    b.ln2_bias = add_param(pre + "ln2.bias", zeros(d));
    b.fc_w = add_param(pre + "mlp.fc.weight", normal({d, 4 * d}));
    b.fc_b = add_param(pre + "mlp.fc.bias", zeros(4 * d));
    b.proj_w = add_param(pre + "mlp.proj.weight", normal({4 * d, d}));
    b.proj_b = add_param(pre + "mlp.proj.bias", zeros(d));
    blocks_.push_back(b);
  }
  lnf_gain_ = add_param("ln_f.gain", ones(d));
  lnf_bias_ = add_param("ln_f.bias", zeros(d));
  head_w_ = add_param("head.weight", normal({d, v}));
  head_b_ = add_param("head.bias", zeros(v));
  reg_w_ = add_param("reg_proj.weight", normal({d, p}));
  reg_b_ = add_param("reg_proj.bias", zeros(p));
}

Tensor& Transformer::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Tensor& Transformer::parameter(const std::string& name) const {
  return const_cast<Transformer*>(this)->parameter(name);
}

std::size_t Transformer::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Transformer::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

void Transformer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {
void check_batch(const ModelConfig& cfg, const TokenBatch& batch) {
  if (batch.n_seq == 0 || batch.seq_len == 0) throw std::invalid_argument("empty token batch");
  if (batch.tokens.size() != batch.n_seq * batch.seq_len) throw std::invalid_argument("token batch size mismatch");
  if (batch.seq_len > cfg.max_seq_len) {
    throw std::length_error("sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
  }
}

}  // namespace

template <typename Self>
ad::Var Transformer::embed_impl(Self& self, ad::Tape& tape, const TokenBatch& batch) {
  check_batch(self.cfg_, batch);
  std::vector<TokenId> positions(batch.tokens.size());
  for (std::size_t s = 0; s < batch.n_seq; ++s)
    for (std::size_t t = 0; t < batch.seq_len; ++t) positions[s * batch.seq_len + t] = static_cast<TokenId>(t);
  const ad::Var tok = ad::embedding(tape, tape.leaf(self.params_[self.tok_emb_].tensor), batch.tokens);
  const ad::Var pos = ad::embedding(tape, tape.leaf(self.params_[self.pos_emb_].tensor), positions);
  return ad::add(tape, tok, pos);
}

template <typename Self, typename Drop>
ad::Var Transformer::block_impl(Self& self, ad::Tape& tape, ad::Var h, std::size_t layer, std::size_t n_seq,
                                std::size_t seq_len, Drop&& drop) {
  if (layer >= self.blocks_.size()) throw std::out_of_range("decoder_block: no layer " + std::to_string(layer));
  const BlockIndex& b = self.blocks_[layer];
  auto P = [&](std::size_t i) { return tape.leaf(self.params_[i].tensor); };
  ad::Var a = ad::layer_norm(tape, h, P(b.ln1_gain), P(b.ln1_bias));
  a = ad::linear(tape, a, P(b.qkv_w), P(b.qkv_b));
  a = ad::causal_self_attention(tape, a, n_seq, seq_len, self.cfg_.n_heads);
  a = drop(ad::linear(tape, a, P(b.out_w), P(b.out_b)), layer + 1, kAttnDrop);
  h = ad::add(tape, h, a);
  ad::Var m = ad::layer_norm(tape, h, P(b.ln2_gain), P(b.ln2_bias));
  m = ad::gelu(tape, ad::linear(tape, m, P(b.fc_w), P(b.fc_b)));
  m = drop(ad::linear(tape, m, P(b.proj_w), P(b.proj_b)), layer + 1, kMlpDrop);
  return ad::add(tape, h, m);
}

ad::Var Transformer::embed(ad::Tape& tape, const TokenBatch& batch) const { return embed_impl(*this, tape, batch); }

ad::Var Transformer::decoder_block(ad::Tape& tape, ad::Var h, std::size_t layer, std::size_t n_seq,
                                   std::size_t seq_len) const {
  return block_impl(*this, tape, h, layer, n_seq, seq_len, [](ad::Var x, std::uint64_t, DropSite) { return x; });
}

ad::Var Transformer::project_for_reg(ad::Tape& tape, ad::Var h) const {
  return ad::linear(tape, h, tape.leaf(params_[reg_w_].tensor), tape.leaf(params_[reg_b_].tensor));
}

template <typename Self>
ForwardResult Transformer::forward_impl(Self& self, ad::Tape& tape, const TokenBatch& batch,
                                        const ForwardOptions& opt) {
  const ModelConfig& cfg = self.cfg_;
  auto& params = self.params_;
  auto P = [&](std::size_t i) { return tape.leaf(params[i].tensor); };
  const double p_drop = opt.train_mode ? cfg.dropout_p : 0.0;
  auto drop = [&](ad::Var x, std::uint64_t layer, DropSite site) {
    return ad::dropout(tape, x, p_drop, derive_seed(opt.dropout_seed, layer, site));
  };

  ForwardResult r;
  ad::Var h = drop(embed_impl(self, tape, batch), 0, kEmbedDrop);
  r.layer_activations.push_back(h);
  for (std::size_t l = 0; l < self.blocks_.size(); ++l) {
    h = block_impl(self, tape, h, l, batch.n_seq, batch.seq_len, drop);
    r.layer_activations.push_back(h);
  }
  ad::Var f = ad::layer_norm(tape, h, P(self.lnf_gain_), P(self.lnf_bias_));
  r.logits = ad::linear(tape, f, P(self.head_w_), P(self.head_b_));
  if (opt.with_projection) {
    const std::size_t layer = opt.projection_layer == kFinalLayer ? cfg.n_layers : opt.projection_layer;
    if (layer > cfg.n_layers) {
      throw std::out_of_range("projection layer " + std::to_string(layer) + " beyond " + std::to_string(cfg.n_layers));
    }
    r.projected = ad::linear(tape, r.layer_activations[layer], P(self.reg_w_), P(self.reg_b_));
  }
  return r;
}

ForwardResult Transformer::forward(ad::Tape& tape, const TokenBatch& batch, const ForwardOptions& opt) {
  return forward_impl(*this, tape, batch, opt);
}

ForwardResult Transformer::forward(ad::Tape& tape, const TokenBatch& batch, const ForwardOptions& opt) const {
  return forward_impl(*this, tape, batch, opt);
}

Tensor Transformer::logits(std::span<const TokenId> tokens) const {
  ad::Tape tape(false);
  const auto r = forward(tape, TokenBatch::single(tokens), ForwardOptions{});
  return tape.value(r.logits);
}

std::vector<TokenId> Transformer::generate(std::span<const TokenId> prompt, std::size_t max_new,
                                           std::optional<TokenId> stop_token) const {
  return generate_batch({std::vector<TokenId>(prompt.begin(), prompt.end())}, max_new, stop_token).front();
}

std::vector<std::vector<TokenId>> Transformer::generate_batch(const std::vector<std::vector<TokenId>>& prompts,
                                                              std::size_t max_new,
                                                              std::optional<TokenId> stop_token) const {
  if (prompts.empty()) return {};
  const std::size_t plen = prompts.front().size();
  for (const auto& p : prompts) {
    if (p.size() != plen) throw std::invalid_argument("generate_batch: prompts must have equal length");
  }
  if (plen == 0) throw std::invalid_argument("generate: empty prompt");
  if (plen + max_new > cfg_.max_seq_len) {
    throw std::length_error("generate: prompt of " + std::to_string(plen) + " tokens plus " + std::to_string(max_new) +
                            " new tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  const std::size_t n = prompts.size();
  std::vector<std::vector<TokenId>> seqs = prompts;
  std::vector<std::vector<TokenId>> out(n);
  std::vector<bool> done(n, false);
  const std::size_t vocab = cfg_.vocab_size;
  for (std::size_t step = 0; step < max_new; ++step) {
    const std::size_t len = plen + step;
    TokenBatch batch{n, len, {}};
    batch.tokens.reserve(n * len);
    for (const auto& s : seqs) batch.tokens.insert(batch.tokens.end(), s.begin(), s.end());
    ad::Tape tape(false);
    const auto r = forward(tape, batch, ForwardOptions{});
    const auto lv = tape.value(r.logits).values();
    bool all_done = true;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = &lv[(i * len + len - 1) * vocab];
      const auto next = static_cast<TokenId>(std::max_element(row, row + vocab) - row);
      seqs[i].push_back(next);
      if (done[i]) continue;
      if (stop_token && next == *stop_token) {
        done[i] = true;
      } else {
        out[i].push_back(next);
      }
      all_done = all_done && done[i];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace seqvcr
