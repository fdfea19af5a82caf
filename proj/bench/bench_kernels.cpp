#include <benchmark/benchmark.h>

#include "btr/common/rng.hpp"
#include "btr/nn/kernels.hpp"

namespace k = btr::nn::kernels;
using btr::nn::Tensor;

namespace {

Tensor random_tensor(int rows, int cols, std::uint64_t seed) {
  btr::Rng rng(seed);
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (auto& x : data) x = rng.normal();
  return Tensor({rows, cols}, std::move(data));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) {
    Tensor c({n, n});
    if constexpr (Parallel) {
      k::parallel::gemm_nt(a, b, c);
    } else {
      k::serial::gemm_nt(a, b, c);
    }
    benchmark::DoNotOptimize(c);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n * n);
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int d = 64, heads = 4;
  const Tensor q = random_tensor(n, d, 1), kk = random_tensor(n, d, 2), v = random_tensor(n, d, 3);
  const auto mask = k::AttentionMask::causal(n);
  for (auto _ : state) {
    auto r = Parallel ? k::parallel::attention_forward(q, kk, v, mask, heads)
                      : k::serial::attention_forward(q, kk, v, mask, heads);
    benchmark::DoNotOptimize(r);
  }
}

template <bool Parallel>
void BM_attention_backward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int d = 64, heads = 4;
  const Tensor q = random_tensor(n, d, 1), kk = random_tensor(n, d, 2), v = random_tensor(n, d, 3);
  const Tensor dout = random_tensor(n, d, 4);
  const auto mask = k::AttentionMask::causal(n);
  const auto fwd = k::serial::attention_forward(q, kk, v, mask, heads);
  for (auto _ : state) {
    Tensor dq({n, d}), dk({n, d}), dv({n, d});
    if constexpr (Parallel) {
      k::parallel::attention_backward(q, kk, v, fwd.probs, mask, heads, dout, dq, dk, dv);
    } else {
      k::serial::attention_backward(q, kk, v, fwd.probs, mask, heads, dout, dq, dk, dv);
    }
    benchmark::DoNotOptimize(dq);
  }
}

}  // namespace

BENCHMARK(BM_gemm_nt<false>)->Name("gemm_nt/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<true>)->Name("gemm_nt/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_attention<false>)->Name("attention_forward/serial")->Arg(32)->Arg(128);
BENCHMARK(BM_attention<true>)->Name("attention_forward/parallel")->Arg(32)->Arg(128);
BENCHMARK(BM_attention_backward<false>)->Name("attention_backward/serial")->Arg(32)->Arg(128);
BENCHMARK(BM_attention_backward<true>)->Name("attention_backward/parallel")->Arg(32)->Arg(128);

BENCHMARK_MAIN();
