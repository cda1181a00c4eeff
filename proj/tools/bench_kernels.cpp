// Serial reference kernels vs the OpenMP kernels at ReferenceCNN layer sizes.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "salprune/kernels.hpp"
#include "salprune/rng.hpp"

using namespace salprune;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Args: batch, in channels, out channels, spatial size.
kernels::ConvDims conv_dims(const benchmark::State& s) {
  return {static_cast<int>(s.range(0)), static_cast<int>(s.range(1)), static_cast<int>(s.range(2)),
          static_cast<int>(s.range(3)), static_cast<int>(s.range(3))};
}

std::size_t in_size(const kernels::ConvDims& d) {
  return static_cast<std::size_t>(d.batch) * d.in_channels * d.height * d.width;
}
std::size_t out_size(const kernels::ConvDims& d) {
  return static_cast<std::size_t>(d.batch) * d.out_channels * d.height * d.width;
}
std::size_t w_size(const kernels::ConvDims& d) { return static_cast<std::size_t>(d.out_channels) * d.in_channels * 9; }

template <bool Serial>
void BM_conv_forward(benchmark::State& s) {
  const auto d = conv_dims(s);
  const auto x = filled(in_size(d), 1), w = filled(w_size(d), 2), b = filled(static_cast<std::size_t>(d.out_channels), 3);
  std::vector<double> y(out_size(d));
  for (auto _ : s) {
    if constexpr (Serial) {
      kernels::serial::conv3x3_forward(d, x, w, b, y);
    } else {
      kernels::conv3x3_forward(d, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  s.counters["threads"] = Serial ? 1 : omp_get_max_threads();
}

template <bool Serial>
void BM_conv_backward(benchmark::State& s) {
  const auto d = conv_dims(s);
  const auto x = filled(in_size(d), 1), w = filled(w_size(d), 2), dy = filled(out_size(d), 4);
  std::vector<double> dx(in_size(d)), dw(w_size(d)), db(static_cast<std::size_t>(d.out_channels));
  for (auto _ : s) {
    if constexpr (Serial) {
      kernels::serial::conv3x3_backward_input(d, dy, w, dx);
      kernels::serial::conv3x3_backward_params(d, x, dy, dw, db);
    } else {
      kernels::conv3x3_backward_input(d, dy, w, dx);
      kernels::conv3x3_backward_params(d, x, dy, dw, db);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  s.counters["threads"] = Serial ? 1 : omp_get_max_threads();
}

// Args: batch, in features, out features.
template <bool Serial>
void BM_dense(benchmark::State& s) {
  const kernels::DenseDims d{static_cast<int>(s.range(0)), static_cast<int>(s.range(1)), static_cast<int>(s.range(2))};
  const std::size_t nx = static_cast<std::size_t>(d.batch) * d.in_features;
  const std::size_t ny = static_cast<std::size_t>(d.batch) * d.out_features;
  const std::size_t nw = static_cast<std::size_t>(d.out_features) * d.in_features;
  const auto x = filled(nx, 1), w = filled(nw, 2), b = filled(static_cast<std::size_t>(d.out_features), 3);
  const auto dy = filled(ny, 4);
  std::vector<double> y(ny), dx(nx), dw(nw), db(static_cast<std::size_t>(d.out_features));
  for (auto _ : s) {
    if constexpr (Serial) {
      kernels::serial::dense_forward(d, x, w, b, y);
      kernels::serial::dense_backward_input(d, dy, w, dx);
      kernels::serial::dense_backward_params(d, x, dy, dw, db);
    } else {
      kernels::dense_forward(d, x, w, b, y);
      kernels::dense_backward_input(d, dy, w, dx);
      kernels::dense_backward_params(d, x, dy, dw, db);
    }
    benchmark::DoNotOptimize(y.data());
    benchmark::DoNotOptimize(dw.data());
  }
  s.counters["threads"] = Serial ? 1 : omp_get_max_threads();
}

// Args: planes, spatial size.
template <bool Serial>
void BM_pool(benchmark::State& s) {
  const kernels::PoolDims d{static_cast<int>(s.range(0)), static_cast<int>(s.range(1)), static_cast<int>(s.range(1))};
  const std::size_t nx = static_cast<std::size_t>(d.planes) * d.height * d.width;
  const auto x = filled(nx, 1);
  std::vector<double> y(nx / 4);
  std::vector<std::int32_t> arg(nx / 4);
  for (auto _ : s) {
    if constexpr (Serial) {
      kernels::serial::max_pool2_forward(d, x, y, arg);
    } else {
      kernels::max_pool2_forward(d, x, y, arg);
    }
    benchmark::DoNotOptimize(y.data());
  }
  s.counters["threads"] = Serial ? 1 : omp_get_max_threads();
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({32, 3, 8, 32})->Args({32, 8, 16, 16})->Unit(benchmark::kMillisecond);
}
void dense_args(benchmark::internal::Benchmark* b) {
  b->Args({32, 1024, 128})->Args({32, 128, 8})->Unit(benchmark::kMicrosecond);
}
void pool_args(benchmark::internal::Benchmark* b) {
  b->Args({32 * 8, 32})->Args({32 * 16, 16})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/serial")->Apply(conv_args);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/openmp")->Apply(conv_args);
BENCHMARK(BM_dense<true>)->Name("dense/serial")->Apply(dense_args);
BENCHMARK(BM_dense<false>)->Name("dense/openmp")->Apply(dense_args);
BENCHMARK(BM_pool<true>)->Name("pool/serial")->Apply(pool_args);
BENCHMARK(BM_pool<false>)->Name("pool/openmp")->Apply(pool_args);

BENCHMARK_MAIN();
