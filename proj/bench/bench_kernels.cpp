// Serial vs OpenMP similarity kernels.

#include "ods/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace ods::kernels;

struct Data {
    std::vector<double> rows;
    std::vector<double> query;
    std::size_t n, dim;
};

Data make(std::size_t n, std::size_t dim) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    Data d{std::vector<double>(n * dim), std::vector<double>(dim), n, dim};
    for (auto& x : d.rows) x = nd(rng);
    for (auto& x : d.query) x = nd(rng);
    return d;
}

void BM_CosineSerial(benchmark::State& st) {
    auto d = make(static_cast<std::size_t>(st.range(0)), 1536);
    MatrixView v{d.rows, d.n, d.dim};
    for (auto _ : st) benchmark::DoNotOptimize(cosine_scores_serial(d.query, v));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_CosineParallel(benchmark::State& st) {
    auto d = make(static_cast<std::size_t>(st.range(0)), 1536);
    MatrixView v{d.rows, d.n, d.dim};
    for (auto _ : st) benchmark::DoNotOptimize(cosine_scores(d.query, v));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_TopKSerial(benchmark::State& st) {
    auto d = make(static_cast<std::size_t>(st.range(0)), 1);
    for (auto _ : st) benchmark::DoNotOptimize(top_k_serial(d.rows, 8));
}

void BM_TopKPartialSort(benchmark::State& st) {
    auto d = make(static_cast<std::size_t>(st.range(0)), 1);
    for (auto _ : st) benchmark::DoNotOptimize(top_k(d.rows, 8));
}

}  // namespace

BENCHMARK(BM_CosineSerial)->RangeMultiplier(4)->Range(64, 16384)->UseRealTime();
BENCHMARK(BM_CosineParallel)->RangeMultiplier(4)->Range(64, 16384)->UseRealTime();
BENCHMARK(BM_TopKSerial)->RangeMultiplier(8)->Range(1024, 1 << 20)->UseRealTime();
BENCHMARK(BM_TopKPartialSort)->RangeMultiplier(8)->Range(1024, 1 << 20)->UseRealTime();

BENCHMARK_MAIN();
