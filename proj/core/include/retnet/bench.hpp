// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retnet/model.hpp"

// Decode-scaling harness: retention decodes with a constant-size state,
// the attention baseline with a grow-with-length KV cache. Each run reports
// wall time over the post-warmup region plus a steady-state tail window
// (the last 64 tokens) whose per-token time and exact MAC count capture the
// cost of decoding *at* that sequence length.
namespace retnet {

enum class Mechanism { kRetention, kAttention, kBoth };
enum class Precision { kF32, kF64 };

struct BenchRecord {
    std::string mechanism;  // "retention" | "attention"
    std::string mode;       // "recurrent" | "kv_cache"
    std::size_t seq_len = 0;
    std::size_t d_model = 0;
    std::size_t heads = 0;
    std::size_t layers = 0;
    double wall_ms = 0;      // after the fixed 64-token warmup
    double tokens_per_s = 0;
    std::size_t state_bytes = 0;  // peak auxiliary state (end of run)
    // not part of the CSV schema; used by the scaling analysis
    double tail_ms_per_token = 0;
    std::uint64_t tail_macs_per_token = 0;
};

/// L=4, d_model=256, h=8: small enough for any desktop, large enough that
/// per-token trends are visible.
ModelConfig reference_bench_config();

std::vector<BenchRecord> bench_decode(const ModelConfig& cfg,
                                      const std::vector<std::size_t>& lens, Mechanism which,
                                      Precision precision, std::uint64_t seed = 7);

/// Exact multiply-accumulate count of decoding one token at the given
/// 0-based position (state/cache already advanced to it).
std::uint64_t retention_decode_macs_at(const ModelConfig& cfg, std::size_t position);
std::uint64_t attention_decode_macs_at(const ModelConfig& cfg, std::size_t position);

/// Schema: mechanism,mode,seq_len,d_model,heads,layers,wall_ms,tokens_per_s,
/// state_bytes. Comment lines (#) record thread count, precision and the
/// baseline's positional-encoding note.
void write_bench_csv(const std::string& path, const std::vector<BenchRecord>& records,
                     int threads, Precision precision);

} // namespace retnet
