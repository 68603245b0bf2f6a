#include "seqvcr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "seqvcr/kernels.hpp"
#include "seqvcr/rng.hpp"

namespace seqvcr::ad {

namespace k = seqvcr::kernels;

// ---------------------------------------------------------------- Tape

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::invalid_argument("Var does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw std::invalid_argument("Var does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::leaf(Tensor& parameter) {
  Node n;
  n.external = &parameter;
  n.needs_grad = record_ && parameter.requires_grad();
  if (n.needs_grad) n.grad_owner = &parameter;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(const Tensor& frozen) {
  Node n;
  n.external = &frozen;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.external) return n.external->grad();
  return n.grad;
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.external) {
    if (!n.grad_owner) throw std::logic_error("gradient requested for a frozen leaf");
    return n.grad_owner->grad();
  }
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) {
      if (in.valid() && node(in).needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (!record_) throw std::logic_error("backward() on a tape created without recording");
  if (replayed_) throw std::logic_error("backward() already ran on this tape");
  const Tensor& rv = value(root);
  if (rv.numel() != 1) throw std::invalid_argument("backward() root must be scalar, got shape " + shape_string(rv.shape()));
  replayed_ = true;
  if (!node(root).needs_grad) return;
  grad_buffer(root)[0] += 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------- helpers

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

std::size_t rows_of(const Shape& s) { return shape_numel(s) / s.back(); }

}  // namespace

// ---------------------------------------------------------------- ops

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), kk = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  k::gemm(k::Trans::No, k::Trans::No, m, n, kk, av.values(), bv.values(), out.values(), false);
  return t.push(std::move(out), {a, b}, [a, b, m, n, kk](Tape& tp, std::span<const double> g) {
    if (tp.requires_grad(a))
      k::gemm(k::Trans::No, k::Trans::Yes, m, kk, n, g, tp.value(b).values(), tp.grad_buffer(a), true);
    if (tp.requires_grad(b))
      k::gemm(k::Trans::Yes, k::Trans::No, kk, n, m, tp.value(a).values(), g, tp.grad_buffer(b), true);
  });
}

Var linear(Tape& t, Var x, Var w, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (wv.rank() != 2 || xv.shape().back() != wv.dim(0)) shape_error("linear", xv.shape(), wv.shape());
  const std::size_t in = wv.dim(0), outd = wv.dim(1), rows = rows_of(xv.shape());
  if (bias.valid() && t.value(bias).numel() != outd) shape_error("linear bias", wv.shape(), t.shape(bias));
  Shape os = xv.shape();
  os.back() = outd;
  Tensor out(os);
  k::gemm(k::Trans::No, k::Trans::No, rows, outd, in, xv.values(), wv.values(), out.values(), false);
  if (bias.valid()) k::add_row_bias(out.values(), t.value(bias).values(), rows, outd);
  return t.push(std::move(out), {x, w, bias}, [x, w, bias, rows, in, outd](Tape& tp, std::span<const double> g) {
    if (tp.requires_grad(x))
      k::gemm(k::Trans::No, k::Trans::Yes, rows, in, outd, g, tp.value(w).values(), tp.grad_buffer(x), true);
    if (tp.requires_grad(w))
      k::gemm(k::Trans::Yes, k::Trans::No, in, outd, rows, tp.value(x).values(), g, tp.grad_buffer(w), true);
    if (bias.valid() && tp.requires_grad(bias)) k::accumulate_column_sums(g, rows, outd, tp.grad_buffer(bias));
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
  Tensor out = av;
  auto o = out.values();
  auto bs = bv.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bs[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::span<const double> g) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto d = tp.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("mul", av.shape(), bv.shape());
  Tensor out = av;
  auto o = out.values();
  auto bs = bv.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bs[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::span<const double> g) {
    // Both operands may be the same node; each contribution is added.
    if (tp.requires_grad(a)) {
      auto other = tp.value(b).values();
      auto d = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
    if (tp.requires_grad(b)) {
      auto other = tp.value(a).values();
      auto d = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= c;
  return t.push(std::move(out), {a}, [a, c](Tape& tp, std::span<const double> g) {
    auto d = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.push(Tensor::scalar(s), {a}, [a](Tape& tp, std::span<const double> g) {
    for (double& d : tp.grad_buffer(a)) d += g[0];
  });
}

Var reshape(Tape& t, Var a, Shape shape) {
  Tensor out = t.value(a).reshaped(std::move(shape));
  return t.push(std::move(out), {a}, [a](Tape& tp, std::span<const double> g) {
    auto d = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var embedding(Tape& t, Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = t.value(table);
  if (tv.rank() != 2) throw std::invalid_argument("embedding: table must be 2-D, got " + shape_string(tv.shape()));
  if (ids.empty()) throw std::invalid_argument("embedding: no ids");
  const std::size_t rows = tv.dim(0), d = tv.dim(1);
  Tensor out(Shape{ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy_n(&tv.values()[static_cast<std::size_t>(ids[r]) * d], d, &out.values()[r * d]);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, saved = std::move(saved), d](Tape& tp, std::span<const double> g) {
    auto dt = tp.grad_buffer(table);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      double* row = &dt[static_cast<std::size_t>(saved[r]) * d];
      for (std::size_t j = 0; j < d; ++j) row[j] += g[r * d + j];
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Tensor& xv = t.value(x);
  const std::size_t d = xv.shape().back(), rows = rows_of(xv.shape());
  if (t.value(gain).numel() != d || t.value(bias).numel() != d) shape_error("layer_norm", xv.shape(), t.shape(gain));
  Tensor out(xv.shape());
  std::vector<double> mean(rows), rstd(rows);
  k::layer_norm_forward(xv.values(), t.value(gain).values(), t.value(bias).values(), rows, d, eps, out.values(),
                        mean, rstd);
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, rows, d, mean = std::move(mean), rstd = std::move(rstd)](Tape& tp,
                                                                                        std::span<const double> g) {
                  std::vector<double> scratch_dx;
                  std::vector<double> scratch_g(d, 0.0), scratch_b(d, 0.0);
                  std::span<double> dx;
                  if (tp.requires_grad(x)) {
                    dx = tp.grad_buffer(x);
                  } else {
                    scratch_dx.assign(rows * d, 0.0);
                    dx = scratch_dx;
                  }
                  auto dg = tp.requires_grad(gain) ? tp.grad_buffer(gain) : std::span<double>(scratch_g);
                  auto db = tp.requires_grad(bias) ? tp.grad_buffer(bias) : std::span<double>(scratch_b);
                  k::layer_norm_backward(g, tp.value(x).values(), tp.value(gain).values(), mean, rstd, rows, d, dx,
                                         dg, db);
                });
}

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  k::gelu_forward(xv.values(), out.values());
  return t.push(std::move(out), {x}, [x](Tape& tp, std::span<const double> g) {
    k::gelu_backward(tp.value(x).values(), g, tp.grad_buffer(x));
  });
}

Var softmax(Tape& t, Var x, std::size_t axis) {
  const Tensor& xv = t.value(x);
  if (axis >= xv.rank()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  Tensor out(xv.shape());
  k::softmax_forward(xv.values(), outer, len, inner, out.values());
  const Var self{t.size()};
  return t.push(std::move(out), {x}, [x, self, outer, len, inner](Tape& tp, std::span<const double> g) {
    k::softmax_backward(tp.value(self).values(), g, outer, len, inner, tp.grad_buffer(x));
  });
}

Var causal_self_attention(Tape& t, Var qkv, std::size_t n_seq, std::size_t seq_len, std::size_t heads) {
  const Tensor& qv = t.value(qkv);
  if (qv.rank() != 2 || qv.dim(1) % 3 != 0 || qv.dim(0) != n_seq * seq_len) {
    throw std::invalid_argument("attention: qkv shape " + shape_string(qv.shape()) + " does not match " +
                                std::to_string(n_seq) + " sequences of length " + std::to_string(seq_len));
  }
  const std::size_t d = qv.dim(1) / 3;
  Tensor out(Shape{n_seq * seq_len, d});
  std::vector<double> probs(n_seq * heads * seq_len * seq_len);
  k::causal_attention_forward(qv.values(), n_seq, seq_len, heads, d, out.values(), probs);
  return t.push(std::move(out), {qkv},
                [qkv, n_seq, seq_len, heads, d, probs = std::move(probs)](Tape& tp, std::span<const double> g) {
                  k::causal_attention_backward(tp.value(qkv).values(), probs, g, n_seq, seq_len, heads, d,
                                               tp.grad_buffer(qkv));
                });
}

Var dropout(Tape& t, Var x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  Rng rng(seed);
  const Tensor& xv = t.value(x);
  std::vector<double> mask(xv.numel());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep;
  Tensor out = xv;
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  return t.push(std::move(out), {x}, [x, mask = std::move(mask)](Tape& tp, std::span<const double> g) {
    auto d = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mask[i];
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const std::int32_t> targets, std::span<const unsigned char> mask) {
  const Tensor& lv = t.value(logits);
  if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-D, got " + shape_string(lv.shape()));
  const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(rows) + " rows but " + std::to_string(targets.size()) +
                                " targets and " + std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is masked");
  std::vector<double> probs(lv.numel());
  k::softmax_forward(lv.values(), rows, vocab, 1, probs);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    // log-softmax directly from logits keeps precision when the target probability underflows
    const double* row = &lv.values()[r * vocab];
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    loss -= row[targets[r]] - mx - std::log(z);
  }
  loss /= static_cast<double>(count);
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<unsigned char> mk(mask.begin(), mask.end());
  return t.push(Tensor::scalar(loss), {logits},
                [logits, rows, vocab, count, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk)](
                    Tape& tp, std::span<const double> g) {
                  auto d = tp.grad_buffer(logits);
                  const double s = g[0] / static_cast<double>(count);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (!mk[r]) continue;
                    for (std::size_t j = 0; j < vocab; ++j) d[r * vocab + j] += s * probs[r * vocab + j];
                    d[r * vocab + static_cast<std::size_t>(tg[r])] -= s;
                  }
                });
}

}  // namespace seqvcr::ad
