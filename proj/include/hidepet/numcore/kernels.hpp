#pragma once

#include <cstddef>
#include <span>

// Dense inner loops used by the autograd ops.
//
// Every kernel exists twice: an OpenMP version in hidepet::kernels and a plain
// serial version in hidepet::kernels::reference. The parallel versions split
// work over output rows with a static schedule and never reduce across
// threads, so results are bit-identical to the serial ones for any thread
// count. Tests pin that; benchmarks/ compares their speed.
//
// All matrices are row-major. `accumulate` adds into C instead of overwriting.

namespace hidepet::kernels {

/// C[m x n] = A[m x k] * B[k x n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

/// C[m x n] = A^T * B with A stored [k x m], B stored [k x n]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

/// C[m x n] = A[m x k] * B^T with B stored [n x k]
template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

/// Row-wise numerically stabilised softmax, in place allowed (x may alias y).
template <typename Real>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const Real> x, std::span<Real> y);

/// Layout of one batched multi-head attention call.
///
/// Q is [batch*tq x dim], K and V are [batch*tk x dim]; head h owns columns
/// [h*dim/heads, (h+1)*dim/heads). probs is [batch x heads x tq x tk].
struct AttentionShape {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t tq = 1;
  std::size_t tk = 1;
  std::size_t dim = 1;
  std::size_t head_dim() const { return dim / heads; }
  std::size_t probs_size() const { return batch * heads * tq * tk; }
};

template <typename Real>
void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> probs, std::span<Real> out);

/// Gradients are accumulated into dq/dk/dv (each may be empty to skip).
template <typename Real>
void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs,
                        std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
                        std::span<Real> dv);

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

namespace reference {

template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate = false);

template <typename Real>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const Real> x, std::span<Real> y);

template <typename Real>
void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> probs, std::span<Real> out);

template <typename Real>
void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs,
                        std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
                        std::span<Real> dv);

}  // namespace reference
}  // namespace hidepet::kernels
