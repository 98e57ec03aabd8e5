// OpenMP kernels against their serial references, plus one end-to-end
// forward/backward pass through the desk-scale architecture.

#include <benchmark/benchmark.h>

#include <vector>

#include "cav/kernels.hpp"
#include "cav/network.hpp"
#include "cav/rng.hpp"
#include "cav/train.hpp"

namespace {

using namespace cav;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto w = random_values(n * n, 1), b = random_values(n, 2), x = random_values(n, 3);
  std::vector<double> y(n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::dense_forward(w, b, n, n, x, y);
    else kernels::serial::dense_forward(w, b, n, n, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_DenseBackwardInput(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto w = random_values(n * n, 1), g = random_values(n, 2);
  std::vector<double> gx(n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::dense_backward_input(w, n, n, g, gx);
    else kernels::serial::dense_backward_input(w, n, n, g, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
  kernels::ConvGeometry geo;
  geo.in_channels = 3;
  geo.in_h = geo.in_w = static_cast<std::size_t>(state.range(0));
  geo.out_channels = 16;
  geo.kernel_h = geo.kernel_w = 3;
  geo.stride = 1;
  auto k = random_values(geo.out_channels * geo.in_channels * 9, 1);
  auto b = random_values(geo.out_channels, 2), x = random_values(geo.in_size(), 3);
  std::vector<double> y(geo.out_size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_forward(geo, k, b, x, y);
    else kernels::serial::conv2d_forward(geo, k, b, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_PivotUpdate(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = 2 * rows;
  auto base = random_values(rows * cols, 4);
  for (std::size_t i = 0; i < rows; ++i) base[i * cols + i] += 4.0;  // nonzero pivots
  std::vector<double> t;
  std::size_t p = 0;
  for (auto _ : state) {
    state.PauseTiming();
    t = base;
    state.ResumeTiming();
    if constexpr (Parallel) kernels::pivot_update(t, rows, cols, p, p);
    else kernels::serial::pivot_update(t, rows, cols, p, p);
    benchmark::DoNotOptimize(t.data());
    p = (p + 1) % rows;
  }
}

void BM_MnistBGradient(benchmark::State& state) {
  Network net = architecture("mnist_b", 1);
  auto x = random_values(784, 5);
  for (double& v : x) v = 0.5 + 0.5 * v;
  Tensor input({1, 28, 28}, x);
  for (auto _ : state) {
    Tensor g = net.grad_input(input, LogitMargin{0});
    benchmark::DoNotOptimize(g);
  }
}

BENCHMARK(BM_DenseForward<false>)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseForward<true>)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseBackwardInput<false>)->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseBackwardInput<true>)->Arg(256)->Arg(1024);
BENCHMARK(BM_Conv2dForward<false>)->Arg(32)->Arg(64);
BENCHMARK(BM_Conv2dForward<true>)->Arg(32)->Arg(64);
BENCHMARK(BM_PivotUpdate<false>)->Arg(128)->Arg(512);
BENCHMARK(BM_PivotUpdate<true>)->Arg(128)->Arg(512);
BENCHMARK(BM_MnistBGradient);

}  // namespace

BENCHMARK_MAIN();
