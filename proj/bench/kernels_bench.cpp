// Serial reference vs OpenMP kernels on square and adapter-shaped products.
//   ./imm_bench --benchmark_filter=matmul
#include <benchmark/benchmark.h>

#include "imm/kernels.hpp"
#include "imm/rng.hpp"

namespace {

template <class T>
imm::Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    imm::Rng rng(seed);
    imm::Matrix<T> m(r, c);
    for (auto& v : m.flat()) v = static_cast<T>(rng.normal(0.0, 1.0));
    return m;
}

template <class T, bool Parallel>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto k = static_cast<std::size_t>(state.range(1));
    auto a = random_matrix<T>(n, n, 1);
    auto b = random_matrix<T>(n, k, 2);
    for (auto _ : state) {
        auto c = Parallel ? imm::kernels::parallel::matmul(a, b) : imm::kernels::serial::matmul(a, b);
        benchmark::DoNotOptimize(c.flat().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * k));
}

template <class T, bool Parallel>
void bm_matmul_tn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_matrix<T>(n, n, 3);
    auto b = random_matrix<T>(n, n, 4);
    for (auto _ : state) {
        auto c = Parallel ? imm::kernels::parallel::matmul_tn(a, b) : imm::kernels::serial::matmul_tn(a, b);
        benchmark::DoNotOptimize(c.flat().data());
    }
}

// {rows, output cols}: square products and thin rank-16 adapter products.
void shapes(benchmark::internal::Benchmark* b) {
    for (int n : {64, 256, 512}) b->Args({n, n});
    b->Args({512, 16});
}

}  // namespace

BENCHMARK(bm_matmul<double, false>)->Apply(shapes);
BENCHMARK(bm_matmul<double, true>)->Apply(shapes);
BENCHMARK(bm_matmul<float, false>)->Apply(shapes);
BENCHMARK(bm_matmul<float, true>)->Apply(shapes);
BENCHMARK(bm_matmul_tn<double, false>)->Arg(256);
BENCHMARK(bm_matmul_tn<double, true>)->Arg(256);

BENCHMARK_MAIN();
