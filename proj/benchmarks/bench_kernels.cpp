// Parallel kernels vs the serial reference, at the shapes the desk backbone uses.
#include <benchmark/benchmark.h>

#include <vector>

#include "hidepet/numcore/kernels.hpp"
#include "hidepet/numcore/rng.hpp"

using namespace hidepet;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const std::size_t m = state.range(0), k = 32, n = 32;
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm_nn<float>(m, k, n, a, b, c);
    else
      kernels::reference::gemm_nn<float>(m, k, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
  const std::size_t m = state.range(0), k = 32, n = 32;
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm_nt<float>(m, k, n, a, b, c);
    else
      kernels::reference::gemm_nt<float>(m, k, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * m * k * n);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  kernels::AttentionShape s{static_cast<std::size_t>(state.range(0)), 4, 9, 19, 32};
  auto q = random_vec(s.batch * s.tq * s.dim, 3);
  auto k = random_vec(s.batch * s.tk * s.dim, 4);
  auto v = random_vec(s.batch * s.tk * s.dim, 5);
  auto dout = random_vec(q.size(), 6);
  std::vector<float> p(s.probs_size()), o(q.size()), dq(q.size()), dk(k.size()), dv(v.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::attention_forward<float>(s, q, k, v, p, o);
      kernels::attention_backward<float>(s, q, k, v, p, dout, dq, dk, dv);
    } else {
      kernels::reference::attention_forward<float>(s, q, k, v, p, o);
      kernels::reference::attention_backward<float>(s, q, k, v, p, dout, dq, dk, dv);
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmNN<true>)->Arg(288)->Arg(2304);
BENCHMARK(BM_GemmNN<false>)->Arg(288)->Arg(2304);
BENCHMARK(BM_GemmNT<true>)->Arg(288)->Arg(2304);
BENCHMARK(BM_GemmNT<false>)->Arg(288)->Arg(2304);
BENCHMARK(BM_Attention<true>)->Arg(32)->Arg(256);
BENCHMARK(BM_Attention<false>)->Arg(32)->Arg(256);

BENCHMARK_MAIN();
