#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every operation in execution order; Var is an index into
// that record. backward() replays the record in reverse, so each node is
// visited exactly once and every input precedes its consumers. A tape can be
// replayed only once.
//
// Parameters enter the tape through leaf(), which references the caller's
// Tensor: gradients are accumulated into Tensor::grad() when that tensor
// requires grad.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "seqvcr/tensor.hpp"

namespace seqvcr::ad {

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

class Tape;
using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

class Tape {
 public:
  /// With record=false only forward values are computed (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Var leaf(Tensor& parameter);
  /// Read-only leaf; never receives gradient.
  Var leaf(const Tensor& frozen);
  Var constant(Tensor value);
  /// Tape-owned leaf; its gradient is read back with grad().
  Var input(Tensor value, bool requires_grad = true);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v).needs_grad; }
  /// Gradient accumulated at v by backward(); empty when none reached it.
  std::span<const double> grad(Var v) const;

  /// Populates gradients of every leaf that requires grad. The root must be a
  /// single-element tensor produced on this tape.
  void backward(Var root);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Op implementation interface.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Gradient buffer of v, allocated on first use. Callers accumulate into it.
  std::span<double> grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor* grad_owner = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  bool record_;
  bool replayed_ = false;
};

// Differentiable operations. Shapes are checked and mismatches are rejected
// with both shapes in the message.

Var matmul(Tape& t, Var a, Var b);
/// x[R×in] · w[in×out] + bias[out]; bias may be an invalid Var.
Var linear(Tape& t, Var x, Var w, Var bias);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var sum(Tape& t, Var a);
Var reshape(Tape& t, Var a, Shape shape);
/// Rows of table[V×d] selected by ids.
Var embedding(Tape& t, Var table, std::span<const std::int32_t> ids);
/// Normalizes over the last axis.
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Tape& t, Var x);
Var softmax(Tape& t, Var x, std::size_t axis);
/// qkv[n_seq·T × 3d] → [n_seq·T × d]; position t attends to positions ≤ t of
/// its own sequence.
Var causal_self_attention(Tape& t, Var qkv, std::size_t n_seq, std::size_t seq_len, std::size_t heads);
/// Inverted dropout with a mask drawn from `seed`; identity when p == 0.
Var dropout(Tape& t, Var x, double p, std::uint64_t seed);
/// Mean over rows with mask[r] != 0 of −log softmax(logits[r])[targets[r]].
Var cross_entropy(Tape& t, Var logits, std::span<const std::int32_t> targets,
                  std::span<const unsigned char> mask);

}  // namespace seqvcr::ad
