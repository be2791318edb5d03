// Serial reference kernels against the OpenMP kernels on shapes the model
// actually runs (64x64 desk images, batch 8).

#include <benchmark/benchmark.h>

#include <vector>

#include "pcreg/kernels.hpp"
#include "pcreg/rng.hpp"

namespace {

using pcreg::kernels::ConvGeometry;
using pcreg::kernels::Trans;

std::vector<float> random_vector(std::size_t n, std::uint64_t stream) {
  pcreg::Rng rng = pcreg::Rng::for_stream(42, stream);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::ptrdiff_t>(state.range(0));
  const auto a = random_vector(static_cast<std::size_t>(n * n), 1);
  const auto b = random_vector(static_cast<std::size_t>(n * n), 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    if constexpr (kParallel) {
      pcreg::kernels::gemm<float>(Trans::kNo, Trans::kNo, n, n, n, 1.0f, a.data(), n, b.data(),
                                  n, 0.0f, c.data(), n);
    } else {
      pcreg::kernels::ref::gemm<float>(Trans::kNo, Trans::kNo, n, n, n, 1.0f, a.data(), n,
                                       b.data(), n, 0.0f, c.data(), n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * static_cast<double>(n * n * n),
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

ConvGeometry geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.batch = 8;
  g.in_channels = state.range(0);
  g.out_channels = state.range(1);
  g.height = state.range(2);
  g.width = state.range(2);
  g.ksize = 3;
  return g;
}

double conv_flops(const ConvGeometry& g) {
  return 2.0 * static_cast<double>(g.batch * g.out_channels * g.plane() * g.patch());
}

template <bool kParallel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const auto x = random_vector(static_cast<std::size_t>(g.batch * g.in_channels * g.plane()), 1);
  const auto w = random_vector(static_cast<std::size_t>(g.out_channels * g.patch()), 2);
  const auto bias = random_vector(static_cast<std::size_t>(g.out_channels), 3);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_channels * g.plane()));
  for (auto _ : state) {
    if constexpr (kParallel) {
      pcreg::kernels::conv2d_forward<float>(g, x.data(), w.data(), bias.data(), y.data());
    } else {
      pcreg::kernels::ref::conv2d_forward<float>(g, x.data(), w.data(), bias.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      conv_flops(g), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <bool kParallel>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = geometry(state);
  const auto x = random_vector(static_cast<std::size_t>(g.batch * g.in_channels * g.plane()), 1);
  const auto w = random_vector(static_cast<std::size_t>(g.out_channels * g.patch()), 2);
  const auto dy = random_vector(static_cast<std::size_t>(g.batch * g.out_channels * g.plane()), 3);
  std::vector<float> dx(x.size()), dw(w.size()), db(static_cast<std::size_t>(g.out_channels));
  for (auto _ : state) {
    if constexpr (kParallel) {
      pcreg::kernels::conv2d_backward<float>(g, x.data(), w.data(), dy.data(), dx.data(),
                                             dw.data(), db.data());
    } else {
      pcreg::kernels::ref::conv2d_backward<float>(g, x.data(), w.data(), dy.data(), dx.data(),
                                                  dw.data(), db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      2.0 * conv_flops(g), benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

// {in, out, size}: full-resolution first block, a mid block, the bottleneck.
void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 32, 64})->Args({64, 64, 32})->Args({128, 256, 8})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/ref")->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->Arg(128)->Arg(256)->Arg(512);
BENCHMARK(BM_ConvForward<false>)->Name("conv3x3_forward/ref")->Apply(conv_shapes);
BENCHMARK(BM_ConvForward<true>)->Name("conv3x3_forward/omp")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv3x3_backward/ref")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv3x3_backward/omp")->Apply(conv_shapes);

BENCHMARK_MAIN();
