// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the retention kernels and the two decode paths.
// These complement the CLI `bench` subcommand, which measures end-to-end
// decode scaling; here each kernel is timed in isolation.

#include <benchmark/benchmark.h>

#include "retnet/attention.hpp"
#include "retnet/bench.hpp"
#include "retnet/model.hpp"
#include "retnet/prng.hpp"
#include "retnet/retention.hpp"

using namespace retnet;

namespace {

Tensor64 random_matrix(Prng& rng, std::size_t r, std::size_t c) {
    Tensor64 t({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
    return t;
}

ModelConfig bench_model() {
    ModelConfig cfg = reference_bench_config();
    cfg.layers = 2;  // keep per-iteration cost microbenchmark-sized
    return cfg;
}

} // namespace

static void BM_RetentionParallel(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0)), d = 64;
    Prng rng(1);
    Tensor64 q = random_matrix(rng, n, d), k = random_matrix(rng, n, d),
             v = random_matrix(rng, n, d);
    for (auto _ : state) {
        Tensor64 out = retention_parallel(q, k, v, 0.96875);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RetentionParallel)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

static void BM_RetentionChunkwise(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0)), d = 64;
    Prng rng(1);
    Tensor64 q = random_matrix(rng, n, d), k = random_matrix(rng, n, d),
             v = random_matrix(rng, n, d);
    for (auto _ : state) {
        RetentionState<double> st(d);
        Tensor64 out = retention_chunkwise(q, k, v, 0.96875, 64, st);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RetentionChunkwise)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

static void BM_RetentionRecurrent(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0)), d = 64;
    Prng rng(1);
    Tensor64 q = random_matrix(rng, n, d), k = random_matrix(rng, n, d),
             v = random_matrix(rng, n, d);
    for (auto _ : state) {
        RetentionState<double> st(d);
        for (std::size_t t = 0; t < n; ++t) {
            Tensor64 qt({d}), kt({d}), vt({d});
            std::copy(q.row(t), q.row(t) + d, qt.data());
            std::copy(k.row(t), k.row(t) + d, kt.data());
            std::copy(v.row(t), v.row(t) + d, vt.data());
            Tensor64 out = retention_recurrent_step(st, qt, kt, vt, 0.96875);
            benchmark::DoNotOptimize(out.data());
        }
    }
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RetentionRecurrent)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

// one recurrent token step, whole model: cost independent of position
static void BM_DecodeStepRetention(benchmark::State& state) {
    ModelConfig cfg = bench_model();
    auto params = init_params<float>(cfg);
    auto st = make_decode_state<float>(cfg);
    std::size_t prefill = static_cast<std::size_t>(state.range(0));
    Prng rng(2);
    for (std::size_t t = 0; t < prefill; ++t)
        decode_step(st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    for (auto _ : state) {
        if (st.position + 1 >= cfg.max_positions) state.SkipWithError("out of positions");
        Tensor<float> row =
            decode_step(st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
        benchmark::DoNotOptimize(row.data());
    }
}
BENCHMARK(BM_DecodeStepRetention)->Arg(64)->Arg(1024)->Arg(4096);

// one cached attention token step: cost grows with the prefill length
static void BM_DecodeStepAttention(benchmark::State& state) {
    ModelConfig cfg = bench_model();
    auto params = init_baseline<float>(cfg);
    auto st = make_baseline_state<float>(cfg);
    std::size_t prefill = static_cast<std::size_t>(state.range(0));
    Prng rng(2);
    for (std::size_t t = 0; t < prefill; ++t)
        baseline_decode_step(st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    for (auto _ : state) {
        if (st.position + 1 >= cfg.max_positions) state.SkipWithError("out of positions");
        Tensor<float> row = baseline_decode_step(
            st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
        benchmark::DoNotOptimize(row.data());
    }
}
BENCHMARK(BM_DecodeStepAttention)->Arg(64)->Arg(1024)->Arg(4096);

BENCHMARK_MAIN();
