// SPDX-License-Identifier: Apache-2.0
#include "retnet/bench.hpp"

#include <chrono>
#include <fstream>

#include "retnet/attention.hpp"
#include "retnet/macs.hpp"
#include "retnet/prng.hpp"

namespace retnet {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

template <typename T>
BenchRecord bench_retention_run(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    ModelParams<T> params = init_params<T>(cfg);
    DecodeState<T> state = make_decode_state<T>(cfg);
    Prng rng(seed);
    std::size_t warm = std::min<std::size_t>(64, n / 2);
    std::size_t tail = std::min<std::size_t>(64, n - warm);

    for (std::size_t t = 0; t < warm; ++t)
        decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);

    auto t0 = Clock::now();
    auto tail_start = t0;
    std::uint64_t tail_macs = 0;
    for (std::size_t t = warm; t < n; ++t) {
        if (t == n - tail) {
            tail_start = Clock::now();
            macs::reset();
        }
        decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    }
    auto t1 = Clock::now();
    tail_macs = macs::total();

    BenchRecord rec;
    rec.mechanism = "retention";
    rec.mode = "recurrent";
    rec.seq_len = n;
    rec.d_model = cfg.d_model;
    rec.heads = cfg.heads;
    rec.layers = cfg.layers;
    rec.wall_ms = ms_between(t0, t1);
    rec.tokens_per_s = (n - warm) / (rec.wall_ms / 1000.0);
    rec.state_bytes = state.bytes();
    rec.tail_ms_per_token = ms_between(tail_start, t1) / static_cast<double>(tail);
    rec.tail_macs_per_token = tail_macs / tail;
    return rec;
}

template <typename T>
BenchRecord bench_attention_run(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    BaselineParams<T> params = init_baseline<T>(cfg);
    BaselineDecodeState<T> state = make_baseline_state<T>(cfg);
    Prng rng(seed);
    std::size_t warm = std::min<std::size_t>(64, n / 2);
    std::size_t tail = std::min<std::size_t>(64, n - warm);

    for (std::size_t t = 0; t < warm; ++t)
        baseline_decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);

    auto t0 = Clock::now();
    auto tail_start = t0;
    std::uint64_t tail_macs = 0;
    for (std::size_t t = warm; t < n; ++t) {
        if (t == n - tail) {
            tail_start = Clock::now();
            macs::reset();
        }
        baseline_decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    }
    auto t1 = Clock::now();
    tail_macs = macs::total();

    BenchRecord rec;
    rec.mechanism = "attention";
    rec.mode = "kv_cache";
    rec.seq_len = n;
    rec.d_model = cfg.d_model;
    rec.heads = cfg.heads;
    rec.layers = cfg.layers;
    rec.wall_ms = ms_between(t0, t1);
    rec.tokens_per_s = (n - warm) / (rec.wall_ms / 1000.0);
    rec.state_bytes = state.bytes();
    rec.tail_ms_per_token = ms_between(tail_start, t1) / static_cast<double>(tail);
    rec.tail_macs_per_token = tail_macs / tail;
    return rec;
}

template <typename T>
std::vector<BenchRecord> bench_decode_impl(const ModelConfig& cfg,
                                           const std::vector<std::size_t>& lens,
                                           Mechanism which, std::uint64_t seed) {
    std::vector<BenchRecord> out;
    if (which == Mechanism::kRetention || which == Mechanism::kBoth)
        for (std::size_t n : lens) out.push_back(bench_retention_run<T>(cfg, n, seed));
    if (which == Mechanism::kAttention || which == Mechanism::kBoth)
        for (std::size_t n : lens) out.push_back(bench_attention_run<T>(cfg, n, seed));
    return out;
}

} // namespace

ModelConfig reference_bench_config() {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.d_model = 256;
    cfg.heads = 8;
    cfg.ffn_dim = 0;
    cfg.vocab_size = 256;
    cfg.chunk_len = 64;
    cfg.max_positions = 8192;
    cfg.stabilized = false;
    cfg.seed = 7;
    return cfg;
}

std::vector<BenchRecord> bench_decode(const ModelConfig& cfg,
                                      const std::vector<std::size_t>& lens, Mechanism which,
                                      Precision precision, std::uint64_t seed) {
    cfg.validate();
    for (std::size_t n : lens) {
        if (n < 2) throw ParameterError("bench: lengths must be >= 2");
        if (n > cfg.max_positions)
            throw ParameterError("bench: length exceeds max_positions");
    }
    return precision == Precision::kF32 ? bench_decode_impl<float>(cfg, lens, which, seed)
                                        : bench_decode_impl<double>(cfg, lens, which, seed);
}

std::uint64_t retention_decode_macs_at(const ModelConfig& cfg, std::size_t position) {
    ModelParams<float> params = init_params<float>(cfg);
    DecodeState<float> state = make_decode_state<float>(cfg);
    Prng rng(11);
    for (std::size_t t = 0; t < position; ++t)
        decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    macs::reset();
    decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    std::uint64_t total = macs::total();
    macs::reset();
    return total;
}

std::uint64_t attention_decode_macs_at(const ModelConfig& cfg, std::size_t position) {
    BaselineParams<float> params = init_baseline<float>(cfg);
    BaselineDecodeState<float> state = make_baseline_state<float>(cfg);
    Prng rng(11);
    for (std::size_t t = 0; t < position; ++t)
        baseline_decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    macs::reset();
    baseline_decode_step(state, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    std::uint64_t total = macs::total();
    macs::reset();
    return total;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records,
                     int threads, Precision precision) {
    std::ofstream out(path);
    if (!out) throw Error("bench: cannot open " + path + " for writing");
    out << "# threads=" << threads << " precision="
        << (precision == Precision::kF32 ? "f32" : "f64") << "\n";
    out << "# attention baseline positional encoding: learned absolute embeddings\n";
    for (const auto& r : records)
        out << "# " << r.mechanism << " seq_len=" << r.seq_len
            << " tail_ms_per_token=" << r.tail_ms_per_token
            << " tail_macs_per_token=" << r.tail_macs_per_token << "\n";
    out << "mechanism,mode,seq_len,d_model,heads,layers,wall_ms,tokens_per_s,state_bytes\n";
    for (const auto& r : records)
        out << r.mechanism << "," << r.mode << "," << r.seq_len << "," << r.d_model << ","
            << r.heads << "," << r.layers << "," << r.wall_ms << "," << r.tokens_per_s << ","
            << r.state_bytes << "\n";
    if (!out) throw Error("bench: write to " + path + " failed");
}

} // namespace retnet
