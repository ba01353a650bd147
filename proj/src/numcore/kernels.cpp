#include "hidepet/numcore/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hidepet::kernels {

namespace {

using Index = std::ptrdiff_t;

template <typename Real>
void softmax_row(const Real* x, Real* y, std::size_t n) {
  if (n == 0) return;
  Real mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  Real sum = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const Real inv = Real(1) / sum;
  for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
}

// One (sample, head) slice of scaled dot-product attention.
template <typename Real>
void attention_slice_forward(const AttentionShape& s, std::size_t b, std::size_t h, const Real* q,
                             const Real* k, const Real* v, Real* probs, Real* out) {
  const std::size_t hd = s.head_dim();
  const std::size_t off = h * hd;
  const Real scale = Real(1) / std::sqrt(Real(hd));
  Real* p = probs + ((b * s.heads + h) * s.tq) * s.tk;
  for (std::size_t i = 0; i < s.tq; ++i) {
    const Real* qi = q + (b * s.tq + i) * s.dim + off;
    Real* pi = p + i * s.tk;
    for (std::size_t j = 0; j < s.tk; ++j) {
      const Real* kj = k + (b * s.tk + j) * s.dim + off;
      Real acc = 0;
      for (std::size_t d = 0; d < hd; ++d) acc += qi[d] * kj[d];
      pi[j] = acc * scale;
    }
    softmax_row(pi, pi, s.tk);
    Real* oi = out + (b * s.tq + i) * s.dim + off;
    for (std::size_t d = 0; d < hd; ++d) oi[d] = 0;
    for (std::size_t j = 0; j < s.tk; ++j) {
      const Real* vj = v + (b * s.tk + j) * s.dim + off;
      const Real pij = pi[j];
      for (std::size_t d = 0; d < hd; ++d) oi[d] += pij * vj[d];
    }
  }
}

template <typename Real>
void attention_slice_backward(const AttentionShape& s, std::size_t b, std::size_t h, const Real* q,
                              const Real* k, const Real* v, const Real* probs, const Real* dout,
                              Real* dq, Real* dk, Real* dv, Real* scratch) {
  const std::size_t hd = s.head_dim();
  const std::size_t off = h * hd;
  const Real scale = Real(1) / std::sqrt(Real(hd));
  const Real* p = probs + ((b * s.heads + h) * s.tq) * s.tk;
  Real* ds = scratch;  // tk entries
  for (std::size_t i = 0; i < s.tq; ++i) {
    const Real* pi = p + i * s.tk;
    const Real* doi = dout + (b * s.tq + i) * s.dim + off;
    // dP_ij = dO_i . V_j ; dS_ij = P_ij (dP_ij - sum_l P_il dP_il)
    Real dot = 0;
    for (std::size_t j = 0; j < s.tk; ++j) {
      const Real* vj = v + (b * s.tk + j) * s.dim + off;
      Real acc = 0;
      for (std::size_t d = 0; d < hd; ++d) acc += doi[d] * vj[d];
      ds[j] = acc;
      dot += pi[j] * acc;
    }
    for (std::size_t j = 0; j < s.tk; ++j) ds[j] = pi[j] * (ds[j] - dot) * scale;
    if (dv) {
      for (std::size_t j = 0; j < s.tk; ++j) {
        Real* dvj = dv + (b * s.tk + j) * s.dim + off;
        const Real pij = pi[j];
        for (std::size_t d = 0; d < hd; ++d) dvj[d] += pij * doi[d];
      }
    }
    if (dq) {
      Real* dqi = dq + (b * s.tq + i) * s.dim + off;
      for (std::size_t j = 0; j < s.tk; ++j) {
        const Real* kj = k + (b * s.tk + j) * s.dim + off;
        for (std::size_t d = 0; d < hd; ++d) dqi[d] += ds[j] * kj[d];
      }
    }
    if (dk) {
      const Real* qi = q + (b * s.tq + i) * s.dim + off;
      for (std::size_t j = 0; j < s.tk; ++j) {
        Real* dkj = dk + (b * s.tk + j) * s.dim + off;
        for (std::size_t d = 0; d < hd; ++d) dkj[d] += ds[j] * qi[d];
      }
    }
  }
}

template <typename Real>
Real* ptr_or_null(std::span<Real> s) {
  return s.empty() ? nullptr : s.data();
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  const Real* A = a.data();
  const Real* B = b.data();
  Real* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    Real* ci = C + i * n;
    if (!accumulate) std::fill(ci, ci + n, Real(0));
    const Real* ai = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = ai[p];
      const Real* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  const Real* A = a.data();
  const Real* B = b.data();
  Real* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    Real* ci = C + i * n;
    if (!accumulate) std::fill(ci, ci + n, Real(0));
    for (std::size_t p = 0; p < k; ++p) {
      const Real api = A[p * m + i];
      const Real* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  // Transposing B once turns the row dot-products into contiguous axpys that
  // vectorise; the per-element summation order (ascending p) is unchanged.
  std::vector<Real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn<Real>(m, k, n, a, bt, c, accumulate);
}

template <typename Real>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const Real> x, std::span<Real> y) {
#pragma omp parallel for schedule(static) if (rows * cols > 32768)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
  }
}

template <typename Real>
void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> probs, std::span<Real> out) {
#pragma omp parallel for schedule(static) if (s.batch > 1)
  for (Index b = 0; b < static_cast<Index>(s.batch); ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      attention_slice_forward(s, b, h, q.data(), k.data(), v.data(), probs.data(), out.data());
    }
  }
}

template <typename Real>
void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs,
                        std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
                        std::span<Real> dv) {
  Real* dqp = ptr_or_null(dq);
  Real* dkp = ptr_or_null(dk);
  Real* dvp = ptr_or_null(dv);
#pragma omp parallel if (s.batch > 1)
  {
    std::vector<Real> scratch(s.tk);
#pragma omp for schedule(static)
    for (Index b = 0; b < static_cast<Index>(s.batch); ++b) {
      for (std::size_t h = 0; h < s.heads; ++h) {
        attention_slice_backward(s, b, h, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                 dqp, dkp, dvp, scratch.data());
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Serial reference implementations: the textbook formula for each entry,
// summed in the same order as above.

namespace reference {

template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a,
             std::span<const Real> b, std::span<Real> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = accumulate ? c[i * n + j] : Real(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const Real> x, std::span<Real> y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
}

template <typename Real>
void attention_forward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                       std::span<const Real> v, std::span<Real> probs, std::span<Real> out) {
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      attention_slice_forward(s, b, h, q.data(), k.data(), v.data(), probs.data(), out.data());
}

template <typename Real>
void attention_backward(const AttentionShape& s, std::span<const Real> q, std::span<const Real> k,
                        std::span<const Real> v, std::span<const Real> probs,
                        std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
                        std::span<Real> dv) {
  std::vector<Real> scratch(s.tk);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      attention_slice_backward(s, b, h, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                               ptr_or_null(dq), ptr_or_null(dk), ptr_or_null(dv), scratch.data());
}

}  // namespace reference

#define HIDEPET_INSTANTIATE_KERNELS(NS, Real)                                                    \
  template void NS::gemm_nn<Real>(std::size_t, std::size_t, std::size_t, std::span<const Real>,  \
                                  std::span<const Real>, std::span<Real>, bool);                 \
  template void NS::gemm_tn<Real>(std::size_t, std::size_t, std::size_t, std::span<const Real>,  \
                                  std::span<const Real>, std::span<Real>, bool);                 \
  template void NS::gemm_nt<Real>(std::size_t, std::size_t, std::size_t, std::span<const Real>,  \
                                  std::span<const Real>, std::span<Real>, bool);                 \
  template void NS::softmax_rows<Real>(std::size_t, std::size_t, std::span<const Real>,          \
                                       std::span<Real>);                                         \
  template void NS::attention_forward<Real>(const AttentionShape&, std::span<const Real>,        \
                                            std::span<const Real>, std::span<const Real>,        \
                                            std::span<Real>, std::span<Real>);                   \
  template void NS::attention_backward<Real>(                                                    \
      const AttentionShape&, std::span<const Real>, std::span<const Real>, std::span<const Real>, \
      std::span<const Real>, std::span<const Real>, std::span<Real>, std::span<Real>,            \
      std::span<Real>);

namespace par = ::hidepet::kernels;
namespace ser = ::hidepet::kernels::reference;
HIDEPET_INSTANTIATE_KERNELS(par, float)
HIDEPET_INSTANTIATE_KERNELS(par, double)
HIDEPET_INSTANTIATE_KERNELS(ser, float)
HIDEPET_INSTANTIATE_KERNELS(ser, double)

#undef HIDEPET_INSTANTIATE_KERNELS

}  // namespace hidepet::kernels
