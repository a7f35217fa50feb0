// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>
#include <utility>
#include <string>
#include <vector>

#include "retnet/msr.hpp"
#include "retnet/ops.hpp"
#include "retnet/prng.hpp"
#include "retnet/retention.hpp"

namespace retnet {

inline constexpr double kLayerNormEps = 1e-6;

/// Model hyperparameters. Widths must be consistent (d_model divisible by
/// heads); everything downstream derives its shapes from this struct.
struct ModelConfig {
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ffn_dim = 0;  // 0 = default 2 * d_model
    std::size_t vocab_size = 256;
    std::size_t chunk_len = 16;
    std::size_t max_positions = 8192;
    bool stabilized = false;
    bool trainable_theta = false;
    bool trainable_gamma = false;
    bool final_norm = true;
    std::uint64_t seed = 1;

    std::size_t ffn() const { return ffn_dim ? ffn_dim : 2 * d_model; }
    std::size_t head_dim() const { return d_model / heads; }

    void validate() const {
        if (layers < 1) throw ParameterError("config: layers must be >= 1");
        if (d_model < 2 || heads < 1 || d_model % heads != 0)
            throw ParameterError("config: d_model must be a positive multiple of heads");
        if (head_dim() % 2 != 0)
            throw ParameterError("config: head_dim must be even (pairwise rotation)");
        if (ffn() < 1) throw ParameterError("config: ffn_dim must be >= 1");
        if (vocab_size < 2) throw ParameterError("config: vocab_size must be >= 2");
        if (chunk_len < 1) throw ParameterError("config: chunk_len must be >= 1");
        if (max_positions < 1) throw ParameterError("config: max_positions must be >= 1");
    }
};

template <typename T>
struct BlockParams {
    MsrParams<T> msr;
    Tensor<T> ln1_scale, ln1_shift;
    Tensor<T> ln2_scale, ln2_shift;
    Tensor<T> w1, w2;  // FFN: gelu(x W1) W2
};

template <typename T>
struct ModelParams {
    Tensor<T> embedding;  // [vocab x d_model]; the output head is its transpose
    std::vector<BlockParams<T>> blocks;
    Tensor<T> final_scale, final_shift;
};

using ModelParams64 = ModelParams<double>;
using ModelParams32 = ModelParams<float>;

/// Visits every learnable tensor in the fixed serialization order used by
/// checkpoints, the optimizer and gradient bookkeeping:
/// embedding, then per block ln1.{scale,shift}, wq, wk, wv, wg, wo,
/// gn.{scale,shift}, gammas, theta, ln2.{scale,shift}, w1, w2, and finally
/// final_ln.{scale,shift}.
template <typename T, typename F>
void visit_params(ModelParams<T>& p, F&& f) {
    f("embedding", p.embedding);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        std::string pre = "block" + std::to_string(l) + ".";
        f(pre + "ln1.scale", b.ln1_scale);
        f(pre + "ln1.shift", b.ln1_shift);
        f(pre + "wq", b.msr.wq);
        f(pre + "wk", b.msr.wk);
        f(pre + "wv", b.msr.wv);
        f(pre + "wg", b.msr.wg);
        f(pre + "wo", b.msr.wo);
        f(pre + "gn.scale", b.msr.gn_scale);
        f(pre + "gn.shift", b.msr.gn_shift);
        f(pre + "gammas", b.msr.gammas);
        f(pre + "theta", b.msr.xpos.theta);
        f(pre + "ln2.scale", b.ln2_scale);
        f(pre + "ln2.shift", b.ln2_shift);
        f(pre + "w1", b.w1);
        f(pre + "w2", b.w2);
    }
    f("final_ln.scale", p.final_scale);
    f("final_ln.shift", p.final_shift);
}

template <typename T, typename F>
void visit_params(const ModelParams<T>& p, F&& f) {
    visit_params(const_cast<ModelParams<T>&>(p),
                 [&](const std::string& name, Tensor<T>& t) { f(name, std::as_const(t)); });
}

namespace detail {

// Values are drawn in double and rounded through float so a freshly
// initialized model round-trips the 32-bit checkpoint format bit-exactly.
inline double snap(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename T>
Tensor<T> normal_init(Prng& rng, std::vector<std::size_t> shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>(snap(rng.normal() * stddev));
    return t;
}

template <typename T>
Tensor<T> xavier_init(Prng& rng, std::size_t fan_in, std::size_t fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t({fan_in, fan_out});
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>(snap(rng.uniform(-bound, bound)));
    return t;
}

template <typename T>
Tensor<T> const_vec(std::size_t n, T v) {
    Tensor<T> t({n});
    for (std::size_t i = 0; i < n; ++i) t[i] = v;
    return t;
}

} // namespace detail

/// Deterministic initialization from the config seed: embedding
/// Normal(0, d_model^-1/2), projections Xavier-uniform, norms identity.
template <typename T = double>
ModelParams<T> init_params(const ModelConfig& cfg) {
    cfg.validate();
    Prng rng(Prng::derive(cfg.seed, 0));
    std::size_t d = cfg.d_model, f = cfg.ffn();
    ModelParams<T> p;
    p.embedding =
        detail::normal_init<T>(rng, {cfg.vocab_size, d}, 1.0 / std::sqrt(double(d)));
    p.blocks.resize(cfg.layers);
    for (auto& b : p.blocks) {
        b.ln1_scale = detail::const_vec<T>(d, T(1));
        b.ln1_shift = detail::const_vec<T>(d, T(0));
        b.msr.wq = detail::xavier_init<T>(rng, d, d);
        b.msr.wk = detail::xavier_init<T>(rng, d, d);
        b.msr.wv = detail::xavier_init<T>(rng, d, d);
        b.msr.wg = detail::xavier_init<T>(rng, d, d);
        b.msr.wo = detail::xavier_init<T>(rng, d, d);
        b.msr.gn_scale = detail::const_vec<T>(d, T(1));
        b.msr.gn_shift = detail::const_vec<T>(d, T(0));
        b.msr.gammas = head_gammas<T>(cfg.heads);
        b.msr.heads = cfg.heads;
        b.msr.xpos = make_xpos<T>(cfg.head_dim(), T(10000), cfg.trainable_theta);
        for (std::size_t j = 0; j < b.msr.xpos.theta.size(); ++j)
            b.msr.xpos.theta[j] = static_cast<T>(detail::snap(b.msr.xpos.theta[j]));
        b.ln2_scale = detail::const_vec<T>(d, T(1));
        b.ln2_shift = detail::const_vec<T>(d, T(0));
        b.w1 = detail::xavier_init<T>(rng, d, f);
        b.w2 = detail::xavier_init<T>(rng, f, d);
    }
    p.final_scale = detail::const_vec<T>(d, T(1));
    p.final_shift = detail::const_vec<T>(d, T(0));
    return p;
}

/// All-zero parameters of the right shapes (checkpoint loading, tests).
template <typename T = double>
ModelParams<T> zero_params(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t d = cfg.d_model, f = cfg.ffn();
    ModelParams<T> p;
    p.embedding = Tensor<T>({cfg.vocab_size, d});
    p.blocks.resize(cfg.layers);
    for (auto& b : p.blocks) {
        b.ln1_scale = Tensor<T>({d});
        b.ln1_shift = Tensor<T>({d});
        b.msr.wq = Tensor<T>({d, d});
        b.msr.wk = Tensor<T>({d, d});
        b.msr.wv = Tensor<T>({d, d});
        b.msr.wg = Tensor<T>({d, d});
        b.msr.wo = Tensor<T>({d, d});
        b.msr.gn_scale = Tensor<T>({d});
        b.msr.gn_shift = Tensor<T>({d});
        b.msr.gammas = Tensor<T>({cfg.heads});
        b.msr.heads = cfg.heads;
        b.msr.xpos.head_dim = cfg.head_dim();
        b.msr.xpos.trainable = cfg.trainable_theta;
        b.msr.xpos.theta = Tensor<T>({cfg.head_dim() / 2});
        b.ln2_scale = Tensor<T>({d});
        b.ln2_shift = Tensor<T>({d});
        b.w1 = Tensor<T>({d, f});
        b.w2 = Tensor<T>({f, d});
    }
    p.final_scale = Tensor<T>({d});
    p.final_shift = Tensor<T>({d});
    return p;
}

template <typename T>
std::size_t param_count(const ModelParams<T>& p) {
    std::size_t n = 0;
    visit_params(p, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
}

/// One block: y = MSR(LN(x)) + x; out = FFN(LN(y)) + y, FFN(z) = gelu(z W1) W2.
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& b, ExecMode mode,
                        std::type_identity_t<std::vector<RetentionState<T>>*> states,
                        std::size_t chunk_len, bool stabilized) {
    Tensor<T> ln1 = layer_norm(x, T(kLayerNormEps), b.ln1_scale, b.ln1_shift);
    Tensor<T> y = add(msr_forward(ln1, b.msr, mode, states, chunk_len, stabilized), x);
    Tensor<T> ln2 = layer_norm(y, T(kLayerNormEps), b.ln2_scale, b.ln2_shift);
    return add(matmul(gelu(matmul(ln2, b.w1)), b.w2), y);
}

/// Whole-model state for incremental decoding: one retention state per layer
/// and head plus the shared position counter. Its size never depends on how
/// many tokens have been absorbed.
template <typename T>
struct DecodeState {
    std::vector<std::vector<RetentionState<T>>> layers;  // [L][h]
    std::size_t position = 0;

    std::size_t bytes() const {
        std::size_t b = sizeof(position);
        for (const auto& layer : layers)
            for (const auto& st : layer) b += st.bytes();
        return b;
    }
};

template <typename T>
DecodeState<T> make_decode_state(const ModelConfig& cfg) {
    DecodeState<T> st;
    st.layers.resize(cfg.layers);
    for (auto& layer : st.layers) layer = fresh_states<T>(cfg.heads, cfg.head_dim());
    return st;
}

inline void check_tokens(const std::vector<int>& tokens, const ModelConfig& cfg) {
    if (tokens.empty()) throw InputError("model: empty token sequence");
    if (tokens.size() > cfg.max_positions)
        throw InputError("model: sequence exceeds max_positions");
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw InputError("model: token id " + std::to_string(t) + " out of range");
}

/// The tied output head is scaled by d_model^-1/2 so a freshly initialized
/// model predicts near-uniformly (unit-variance logits would not).
inline double output_head_scale(const ModelConfig& cfg) {
    return 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
}

/// Full forward: embed, run the block stack in the chosen execution form,
/// apply the final norm (if configured) and the scaled tied output head.
/// Logit row n depends only on tokens at positions <= n.
template <typename T>
Tensor<T> lm_forward(const std::vector<int>& tokens, const ModelParams<T>& p,
                     const ModelConfig& cfg, ExecMode mode) {
    check_tokens(tokens, cfg);
    Tensor<T> x = gather_rows(p.embedding, tokens);
    if (mode == ExecMode::kParallel) {
        for (const auto& b : p.blocks)
            x = block_forward(x, b, mode, nullptr, cfg.chunk_len, cfg.stabilized);
    } else {
        auto states = make_decode_state<T>(cfg);
        for (std::size_t l = 0; l < p.blocks.size(); ++l)
            x = block_forward(x, p.blocks[l], mode, &states.layers[l], cfg.chunk_len,
                              cfg.stabilized);
    }
    if (cfg.final_norm)
        x = layer_norm(x, T(kLayerNormEps), p.final_scale, p.final_shift);
    return scale(matmul_bt(x, p.embedding), static_cast<T>(output_head_scale(cfg)));
}

/// One recurrent token step through all layers; returns the logit row.
template <typename T>
Tensor<T> decode_step(DecodeState<T>& state, int token, const ModelParams<T>& p,
                      const ModelConfig& cfg) {
    if (state.position >= cfg.max_positions)
        throw InputError("decode_step: position exceeds max_positions");
    if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size)
        throw InputError("decode_step: token id out of range");
    Tensor<T> x = gather_rows(p.embedding, std::vector<int>{token});
    for (std::size_t l = 0; l < p.blocks.size(); ++l)
        x = block_forward(x, p.blocks[l], ExecMode::kRecurrent, &state.layers[l],
                          cfg.chunk_len, cfg.stabilized);
    if (cfg.final_norm)
        x = layer_norm(x, T(kLayerNormEps), p.final_scale, p.final_shift);
    state.position += 1;
    Tensor<T> logits = scale(matmul_bt(x, p.embedding),
                             static_cast<T>(output_head_scale(cfg)));
    Tensor<T> row({cfg.vocab_size});
    std::copy(logits.data(), logits.data() + cfg.vocab_size, row.data());
    return row;
}

/// Greedy pick: highest logit, lowest index on ties.
template <typename T>
int argmax_token(const Tensor<T>& logits_row) {
    int best = 0;
    T bv = logits_row[0];
    for (std::size_t i = 1; i < logits_row.size(); ++i)
        if (logits_row[i] > bv) {
            bv = logits_row[i];
            best = static_cast<int>(i);
        }
    return best;
}

} // namespace retnet
