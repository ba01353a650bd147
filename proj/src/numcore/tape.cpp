#include "hidepet/numcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "hidepet/numcore/kernels.hpp"

namespace hidepet {

template <typename Real>
Var Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
Var Tape<Real>::param(Tensor<Real>& leaf) {
  Node n;
  n.value = leaf;
  n.value.set_requires_grad(false);
  n.leaf = &leaf;
  n.needs_grad = leaf.requires_grad();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
Var Tape<Real>::record(Tensor<Real> value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.valid() && nodes_.at(in.id).needs_grad) n.needs_grad = true;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
void Tape<Real>::backward(Var loss) {
  const Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(root.value.shape()));
  }
  if (!root.needs_grad) return;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.grad.assign(n.value.numel(), Real(0));
  }
  nodes_[loss.id].grad[0] = Real(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.backward) n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.leaf && n.needs_grad) {
      auto g = n.leaf->grad();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
    }
  }
}

namespace {

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* op, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank-2, got " +
                         shape_str(t.shape()));
  }
}

template <typename Real>
void require_finite(const Tensor<Real>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename Real>
void add_into(std::span<Real> dst, std::span<const Real> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename Real>
Var affine(Tape<Real>& t, Var x, Var w, Var b) {
  const Tensor<Real>& X = t.value(x);
  const Tensor<Real>& W = t.value(w);
  require_matrix(X, "affine", "x");
  require_matrix(W, "affine", "W");
  const std::size_t n = X.rows(), din = X.cols(), dout = W.cols();
  if (W.rows() != din) {
    throw DimensionError("affine: inner dimensions differ (" + shape_str(X.shape()) + " * " +
                         shape_str(W.shape()) + ")");
  }
  Tensor<Real> out({n, dout});
  kernels::gemm_nn<Real>(n, din, dout, X.data(), W.data(), out.data());
  if (b.valid()) {
    const Tensor<Real>& B = t.value(b);
    if (B.numel() != dout) {
      throw DimensionError("affine: bias has " + std::to_string(B.numel()) + " entries, expected " +
                           std::to_string(dout));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dout; ++j) out.at(i, j) += B[j];
  }
  return t.record(std::move(out), {x, w, b}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    const auto& Xv = tp.value(x);
    const auto& Wv = tp.value(w);
    if (tp.needs_grad(x)) kernels::gemm_nt<Real>(n, dout, din, g, Wv.data(), tp.grad(x), true);
    if (tp.needs_grad(w)) kernels::gemm_tn<Real>(din, n, dout, Xv.data(), g, tp.grad(w), true);
    if (b.valid() && tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
    }
  });
}

template <typename Real>
Var matmul(Tape<Real>& t, Var a, Var b) {
  return affine(t, a, b, Var{});
}

template <typename Real>
Var add(Tape<Real>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.shape() != B.shape()) {
    throw DimensionError("add: shapes differ " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  }
  Tensor<Real> out = A;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += B[i];
  return t.record(std::move(out), {a, b}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    if (tp.needs_grad(a)) add_into<Real>(tp.grad(a), g);
    if (tp.needs_grad(b)) add_into<Real>(tp.grad(b), g);
  });
}

template <typename Real>
Var scale(Tape<Real>& t, Var a, Real s) {
  Tensor<Real> out = t.value(a);
  for (auto& v : out.data()) v *= s;
  return t.record(std::move(out), {a}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename Real>
Var mul(Tape<Real>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.shape() != B.shape()) {
    throw DimensionError("mul: shapes differ " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
  }
  Tensor<Real> out = A;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a, b}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    const auto& Av = tp.value(a);
    const auto& Bv = tp.value(b);
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Bv[i];
    }
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * Av[i];
    }
  });
}

template <typename Real>
Var sum(Tape<Real>& t, Var a) {
  const auto& A = t.value(a);
  Real s = 0;
  for (Real v : A.data()) s += v;
  Tensor<Real> out({1, 1}, s);
  return t.record(std::move(out), {a}, [=](Tape<Real>& tp, std::size_t self) {
    const Real g = tp.grad(Var{self})[0];
    for (auto& v : tp.grad(a)) v += g;
  });
}

template <typename Real>
Var gelu(Tape<Real>& t, Var a) {
  Tensor<Real> out = t.value(a);
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  for (auto& v : out.data()) v = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
  return t.record(std::move(out), {a}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    const auto& A = tp.value(a);
    auto ga = tp.grad(a);
    const Real inv_sqrt_2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real x = A[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
      const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * x * x);
      ga[i] += g[i] * (cdf + x * pdf);
    }
  });
}

template <typename Real>
Var layer_norm_rows(Tape<Real>& t, Var a, Real eps) {
  const auto& A = t.value(a);
  require_matrix(A, "layer_norm_rows", "input");
  const std::size_t n = A.rows(), d = A.cols();
  Tensor<Real> out({n, d});
  auto inv_std = std::make_shared<std::vector<Real>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = A.row(i);
    Real mean = 0;
    for (Real v : r) mean += v;
    mean /= Real(d);
    Real var = 0;
    for (Real v : r) var += (v - mean) * (v - mean);
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    auto o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) o[j] = (r[j] - mean) * is;
  }
  return t.record(std::move(out), {a}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    const auto& Y = tp.value(Var{self});
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < n; ++i) {
      const Real* gi = g.data() + i * d;
      const Real* yi = Y.data().data() + i * d;
      Real mg = 0, mgy = 0;
      for (std::size_t j = 0; j < d; ++j) {
        mg += gi[j];
        mgy += gi[j] * yi[j];
      }
      mg /= Real(d);
      mgy /= Real(d);
      Real* gai = ga.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) gai[j] += (*inv_std)[i] * (gi[j] - mg - yi[j] * mgy);
    }
  });
}

template <typename Real>
Var softmax_rows(Tape<Real>& t, Var a) {
  const auto& A = t.value(a);
  require_matrix(A, "softmax_rows", "input");
  require_finite(A, "softmax_rows");
  const std::size_t n = A.rows(), c = A.cols();
  Tensor<Real> out({n, c});
  kernels::softmax_rows<Real>(n, c, A.data(), out.data());
  return t.record(std::move(out), {a}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    const auto& Y = tp.value(Var{self});
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < n; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * Y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += Y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

template <typename Real>
Var cross_entropy(Tape<Real>& t, Var logits, std::span<const std::size_t> targets) {
  const auto& L = t.value(logits);
  require_matrix(L, "cross_entropy", "logits");
  require_finite(L, "cross_entropy");
  const std::size_t n = L.rows(), c = L.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  for (std::size_t y : targets) {
    if (y >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(y) + " out of range for " +
                       std::to_string(c) + " classes");
    }
  }
  auto probs = std::make_shared<std::vector<Real>>(n * c);
  kernels::softmax_rows<Real>(n, c, L.data(), *probs);
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = L.row(i);
    const Real mx = *std::max_element(r.begin(), r.end());
    Real s = 0;
    for (Real v : r) s += std::exp(v - mx);
    loss += (std::log(s) + mx) - r[targets[i]];
  }
  loss /= Real(n);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return t.record(Tensor<Real>({1, 1}, loss), {logits},
                  [=, tgt = std::move(tgt)](Tape<Real>& tp, std::size_t self) {
                    const Real g = tp.grad(Var{self})[0] / Real(n);
                    auto gl = tp.grad(logits);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * (*probs)[i * c + j];
                      gl[i * c + tgt[i]] -= g;
                    }
                  });
}

template <typename Real>
Var select_columns(Tape<Real>& t, Var a, std::span<const std::size_t> columns) {
  const auto& A = t.value(a);
  require_matrix(A, "select_columns", "input");
  const std::size_t n = A.rows(), c = A.cols(), k = columns.size();
  for (std::size_t col : columns) {
    if (col >= c) {
      throw IndexError("select_columns: column " + std::to_string(col) + " of " +
                       std::to_string(c));
    }
  }
  Tensor<Real> out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = A.at(i, columns[j]);
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return t.record(std::move(out), {a}, [=, cols = std::move(cols)](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) ga[i * c + cols[j]] += g[i * k + j];
  });
}

template <typename Real>
Var prepend_rows(Tape<Real>& t, Var prefix, Var seqs, std::size_t batch) {
  const auto& P = t.value(prefix);
  const auto& S = t.value(seqs);
  require_matrix(S, "prepend_rows", "sequences");
  const std::size_t d = S.cols();
  const std::size_t np = P.numel() == 0 ? 0 : P.rows();
  if (np > 0 && P.cols() != d) {
    throw DimensionError("prepend_rows: prefix width " + std::to_string(P.cols()) +
                         " != sequence width " + std::to_string(d));
  }
  if (batch == 0 || S.rows() % batch != 0) {
    throw DimensionError("prepend_rows: " + std::to_string(S.rows()) +
                         " rows do not split into batch " + std::to_string(batch));
  }
  const std::size_t len = S.rows() / batch;
  const std::size_t out_len = np + len;
  Tensor<Real> out({batch * out_len, d});
  for (std::size_t b = 0; b < batch; ++b) {
    Real* dst = out.data().data() + b * out_len * d;
    if (np) std::copy(P.data().begin(), P.data().end(), dst);
    std::copy_n(S.data().begin() + b * len * d, len * d, dst + np * d);
  }
  return t.record(std::move(out), {prefix, seqs}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    if (np && tp.needs_grad(prefix)) {
      auto gp = tp.grad(prefix);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < np * d; ++i) gp[i] += g[b * out_len * d + i];
    }
    if (tp.needs_grad(seqs)) {
      auto gs = tp.grad(seqs);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < len * d; ++i) gs[b * len * d + i] += g[(b * out_len + np) * d + i];
    }
  });
}

template <typename Real>
Var take_row(Tape<Real>& t, Var seqs, std::size_t batch, std::size_t len, std::size_t index) {
  const auto& S = t.value(seqs);
  require_matrix(S, "take_row", "sequences");
  if (S.rows() != batch * len) {
    throw DimensionError("take_row: expected " + std::to_string(batch * len) + " rows, got " +
                         std::to_string(S.rows()));
  }
  if (index >= len) throw IndexError("take_row: index " + std::to_string(index) + " >= " + std::to_string(len));
  const std::size_t d = S.cols();
  Tensor<Real> out({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    auto src = S.row(b * len + index);
    std::copy(src.begin(), src.end(), out.row(b).begin());
  }
  return t.record(std::move(out), {seqs}, [=](Tape<Real>& tp, std::size_t self) {
    auto g = tp.grad(Var{self});
    auto gs = tp.grad(seqs);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < d; ++j) gs[(b * len + index) * d + j] += g[b * d + j];
  });
}

template <typename Real>
Var attention(Tape<Real>& t, Var q, Var k, Var v, std::size_t batch, std::size_t heads) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  require_matrix(Q, "attention", "Q");
  require_matrix(K, "attention", "K");
  require_matrix(V, "attention", "V");
  kernels::AttentionShape s;
  s.batch = batch;
  s.heads = heads;
  s.dim = Q.cols();
  if (heads == 0 || s.dim % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(s.dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (K.cols() != s.dim || V.cols() != s.dim || K.rows() != V.rows()) {
    throw DimensionError("attention: Q/K/V widths or K/V lengths differ");
  }
  if (batch == 0 || Q.rows() % batch != 0 || K.rows() % batch != 0) {
    throw DimensionError("attention: rows do not split into the batch");
  }
  s.tq = Q.rows() / batch;
  s.tk = K.rows() / batch;
  Tensor<Real> out({Q.rows(), s.dim});
  auto probs = std::make_shared<std::vector<Real>>(s.probs_size());
  kernels::attention_forward<Real>(s, Q.data(), K.data(), V.data(), *probs, out.data());
  return t.record(std::move(out), {q, k, v}, [=](Tape<Real>& tp, std::size_t self) {
    std::span<Real> none;
    kernels::attention_backward<Real>(s, tp.value(q).data(), tp.value(k).data(),
                                      tp.value(v).data(), *probs, tp.grad(Var{self}),
                                      tp.needs_grad(q) ? tp.grad(q) : none,
                                      tp.needs_grad(k) ? tp.grad(k) : none,
                                      tp.needs_grad(v) ? tp.grad(v) : none);
  });
}

#define HIDEPET_INSTANTIATE_OPS(Real)                                                        \
  template class Tape<Real>;                                                                 \
  template Var affine<Real>(Tape<Real>&, Var, Var, Var);                                     \
  template Var matmul<Real>(Tape<Real>&, Var, Var);                                          \
  template Var add<Real>(Tape<Real>&, Var, Var);                                             \
  template Var scale<Real>(Tape<Real>&, Var, Real);                                          \
  template Var mul<Real>(Tape<Real>&, Var, Var);                                             \
  template Var sum<Real>(Tape<Real>&, Var);                                                  \
  template Var gelu<Real>(Tape<Real>&, Var);                                                 \
  template Var layer_norm_rows<Real>(Tape<Real>&, Var, Real);                                \
  template Var softmax_rows<Real>(Tape<Real>&, Var);                                         \
  template Var cross_entropy<Real>(Tape<Real>&, Var, std::span<const std::size_t>);          \
  template Var select_columns<Real>(Tape<Real>&, Var, std::span<const std::size_t>);         \
  template Var prepend_rows<Real>(Tape<Real>&, Var, Var, std::size_t);                       \
  template Var take_row<Real>(Tape<Real>&, Var, std::size_t, std::size_t, std::size_t);      \
  template Var attention<Real>(Tape<Real>&, Var, Var, Var, std::size_t, std::size_t);

HIDEPET_INSTANTIATE_OPS(float)
HIDEPET_INSTANTIATE_OPS(double)

#undef HIDEPET_INSTANTIATE_OPS

}  // namespace hidepet
