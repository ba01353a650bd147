#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "hidepet/numcore/tensor.hpp"

namespace hidepet {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Reverse-mode gradient tape.
///
/// Values are recorded in execution order; backward() walks them in reverse.
/// Parameter leaves alias caller-owned tensors and, when those tensors have
/// requires_grad set, their gradient buffers receive the accumulated result.
/// Nodes that cannot reach a trainable leaf skip gradient work entirely.
/// A tape is used by one thread at a time.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor<Real> value);
  Var param(Tensor<Real>& leaf);

  Var record(Tensor<Real> value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor<Real>& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient buffer of a node during backward(); empty if the node needs none.
  std::span<Real> grad(Var v) { return nodes_.at(v.id).grad; }
  std::span<const Real> grad_of(Var v) const { return nodes_.at(v.id).grad; }

  /// Propagates d(loss)/d(.) to every trainable leaf. Leaf gradients add to
  /// whatever the leaf already holds; zero them between steps.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor<Real> value;
    std::vector<Real> grad;
    BackwardFn backward;
    Tensor<Real>* leaf = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All take and return rank-2 values unless noted.

/// x[n x d_in] * W[d_in x d_out] (+ b[d_out] broadcast over rows)
template <typename Real>
Var affine(Tape<Real>& t, Var x, Var w, Var b = {});

template <typename Real>
Var matmul(Tape<Real>& t, Var a, Var b);

template <typename Real>
Var add(Tape<Real>& t, Var a, Var b);

template <typename Real>
Var scale(Tape<Real>& t, Var a, Real s);

/// Elementwise product.
template <typename Real>
Var mul(Tape<Real>& t, Var a, Var b);

/// Sum of all entries, as a 1x1 value.
template <typename Real>
Var sum(Tape<Real>& t, Var a);

/// Exact (erf-based) GELU.
template <typename Real>
Var gelu(Tape<Real>& t, Var a);

/// Per-row standardisation without learned gain or bias.
template <typename Real>
Var layer_norm_rows(Tape<Real>& t, Var a, Real eps = Real(1e-5));

template <typename Real>
Var softmax_rows(Tape<Real>& t, Var a);

/// Mean over rows of -log softmax(logits)[target]; returns 1x1.
template <typename Real>
Var cross_entropy(Tape<Real>& t, Var logits, std::span<const std::size_t> targets);

/// Keeps the listed columns, in the listed order.
template <typename Real>
Var select_columns(Tape<Real>& t, Var a, std::span<const std::size_t> columns);

/// For a batch of sequences stacked as [batch*len x d], prepends the same
/// prefix [p x d] to each sequence, giving [batch*(p+len) x d].
template <typename Real>
Var prepend_rows(Tape<Real>& t, Var prefix, Var seqs, std::size_t batch);

/// Picks row `index` of every length-`len` sequence: [batch*len x d] -> [batch x d].
template <typename Real>
Var take_row(Tape<Real>& t, Var seqs, std::size_t batch, std::size_t len, std::size_t index);

/// Batched multi-head scaled dot-product attention (see kernels::AttentionShape).
template <typename Real>
Var attention(Tape<Real>& t, Var q, Var k, Var v, std::size_t batch, std::size_t heads);

}  // namespace hidepet
