// OpenMP kernels against their serial reference twins.

#include <vector>

#include <benchmark/benchmark.h>

#include "crisp/kernels.hpp"
#include "crisp/rng.hpp"

using namespace crisp;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

using GemmFn = void (*)(int, int, int, const float*, const float*, float*, bool);

template <GemmFn F>
void BM_Gemm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = filled(static_cast<std::size_t>(n) * n, 1);
    const auto b = filled(static_cast<std::size_t>(n) * n, 2);
    std::vector<float> c(static_cast<std::size_t>(n) * n);
    for (auto _ : state) {
        F(n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

using Im2colFn = void (*)(const kernels::ConvGeometry&, const float*, float*, std::size_t, std::size_t);

template <Im2colFn F>
void BM_Im2col(benchmark::State& state) {
    const kernels::ConvGeometry g{static_cast<int>(state.range(0)), 96, 48, 3, 2, 1};
    const auto image = filled(static_cast<std::size_t>(g.channels) * g.height * g.width, 3);
    const std::size_t ld = static_cast<std::size_t>(g.out_height()) * g.out_width();
    std::vector<float> cols(g.patch_size() * ld);
    for (auto _ : state) {
        F(g, image.data(), cols.data(), ld, 0);
        benchmark::DoNotOptimize(cols.data());
    }
}

using ScoreFn = void (*)(std::span<const float>, std::size_t, int, int, std::span<const int>, std::span<const double>,
                         std::span<double>);

// 128 channels on a 12 x 6 grid, three quarters of the cells visible.
template <ScoreFn F>
void BM_MaskedCosine(benchmark::State& state) {
    const std::size_t count = static_cast<std::size_t>(state.range(0));
    constexpr int channels = 128, cells = 72;
    const auto entries = filled(count * channels * cells, 4);
    std::vector<int> mask;
    for (int c = 0; c < 54; ++c) mask.push_back(c);
    std::vector<double> query(static_cast<std::size_t>(channels) * cells, 1.0 / 83.0);
    std::vector<double> scores(count);
    for (auto _ : state) {
        F(entries, count, channels, cells, mask, query, scores);
        benchmark::DoNotOptimize(scores.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long long>(count));
}

}  // namespace

BENCHMARK(BM_Gemm<kernels::gemm>)->Name("gemm/omp")->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<kernels::reference::gemm>)->Name("gemm/reference")->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<kernels::gemm_nt>)->Name("gemm_nt/omp")->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<kernels::reference::gemm_nt>)->Name("gemm_nt/reference")->Arg(128)->Arg(256);
BENCHMARK(BM_Im2col<kernels::im2col>)->Name("im2col/omp")->Arg(16)->Arg(64);
BENCHMARK(BM_Im2col<kernels::reference::im2col>)->Name("im2col/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_MaskedCosine<kernels::masked_cosine_scores>)->Name("masked_cosine/omp")->Arg(1000)->Arg(10000);
BENCHMARK(BM_MaskedCosine<kernels::reference::masked_cosine_scores>)
    ->Name("masked_cosine/reference")
    ->Arg(1000)
    ->Arg(10000);

BENCHMARK_MAIN();
