#pragma once

// Decoder-only transformer: token + learned positional embedding, pre-norm
// residual blocks (causal multi-head attention, GELU MLP of width 4·d), a
// classifier head (final layer norm + linear), and a linear projection head
// used only by the variance-covariance regularizer.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqvcr/autodiff.hpp"
#include "seqvcr/tensor.hpp"

namespace seqvcr {

using TokenId = std::int32_t;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 128;
  double dropout_p = 0.1;
  /// 0 means 4·d_model.
  std::size_t proj_dim = 0;

  std::size_t projection_width() const { return proj_dim == 0 ? 4 * d_model : proj_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Number of scalar parameters:
///   V·d + S·d                       token and positional tables
/// + L·(12·d² + 13·d)                per block: 2 norms, qkv, out, 2 MLP layers
/// + 2·d + d·V + V                   final norm and classifier
/// + d·P + P                         projection head
std::size_t parameter_count(const ModelConfig& cfg);

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Equal-length token sequences laid out row-major [n_seq × seq_len].
struct TokenBatch {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;

  static TokenBatch single(std::span<const TokenId> seq);
};

inline constexpr std::size_t kFinalLayer = static_cast<std::size_t>(-1);

struct ForwardOptions {
  bool with_projection = false;
  bool train_mode = false;
  /// Activation index fed to the projection head: 0 is the embedding output,
  /// l is the output of block l. kFinalLayer selects the last block.
  std::size_t projection_layer = kFinalLayer;
  std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
  ad::Var logits;                          // [n_seq·T × vocab]
  std::vector<ad::Var> layer_activations;  // n_layers + 1 entries of [n_seq·T × d]
  ad::Var projected;                       // [n_seq·T × P] when requested
};

class Transformer {
 public:
  Transformer() = default;
  /// Weights ~ N(0, 0.02), biases 0, norm gains 1.
  Transformer(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  std::size_t num_scalars() const;

  void set_requires_grad(bool on);
  void zero_grad();

  /// Records onto `tape`. The non-const overload exposes parameters that
  /// require grad; the const one treats them as frozen.
  ForwardResult forward(ad::Tape& tape, const TokenBatch& batch, const ForwardOptions& opt);
  ForwardResult forward(ad::Tape& tape, const TokenBatch& batch, const ForwardOptions& opt) const;

  ad::Var embed(ad::Tape& tape, const TokenBatch& batch) const;
  ad::Var decoder_block(ad::Tape& tape, ad::Var h, std::size_t layer, std::size_t n_seq, std::size_t seq_len) const;
  ad::Var project_for_reg(ad::Tape& tape, ad::Var h) const;

  /// Inference logits for one sequence, [T × vocab].
  Tensor logits(std::span<const TokenId> tokens) const;

  /// Greedy decoding. Stops after max_new tokens or once stop_token is
  /// emitted (the stop token is not returned).
  std::vector<TokenId> generate(std::span<const TokenId> prompt, std::size_t max_new,
                                std::optional<TokenId> stop_token = std::nullopt) const;
  /// Batched greedy decoding of equal-length prompts.
  std::vector<std::vector<TokenId>> generate_batch(const std::vector<std::vector<TokenId>>& prompts,
                                                   std::size_t max_new,
                                                   std::optional<TokenId> stop_token = std::nullopt) const;

 private:
  // Dropout seed derivation sites.
  enum DropSite : std::uint64_t { kEmbedDrop = 0, kAttnDrop = 1, kMlpDrop = 2 };

  template <typename Self>
  static ad::Var embed_impl(Self& self, ad::Tape& tape, const TokenBatch& batch);
  template <typename Self, typename Drop>
  static ad::Var block_impl(Self& self, ad::Tape& tape, ad::Var h, std::size_t layer, std::size_t n_seq,
                            std::size_t seq_len, Drop&& drop);
  template <typename Self>
  static ForwardResult forward_impl(Self& self, ad::Tape& tape, const TokenBatch& batch, const ForwardOptions& opt);

  struct BlockIndex {
    std::size_t ln1_gain, ln1_bias, qkv_w, qkv_b, out_w, out_b, ln2_gain, ln2_bias, fc_w, fc_b, proj_w, proj_b;
  };
  std::size_t add_param(std::string name, Tensor t);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_gain_ = 0, lnf_bias_ = 0, head_w_ = 0, head_b_ = 0, reg_w_ = 0, reg_b_ = 0;
  std::vector<BlockIndex> blocks_;
};

}  // namespace seqvcr
