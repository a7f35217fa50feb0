// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "retnet/model.hpp"
#include "retnet/ops.hpp"

// Minimal causal multi-head softmax attention used as the benchmark
// baseline. Block wiring (LN / FFN / residuals) and initialization mirror the
// retention blocks so decode-cost differences isolate the mixing mechanism.
namespace retnet {

/// softmax(q k^T / sqrt(d_k) + causal mask) applied to one head's q, k.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool causal) {
    if (q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols())
        throw DimensionError("attention: head dims differ");
    std::size_t n = q.rows(), m = k.rows(), d = q.cols();
    T inv_sqrt = T(1) / std::sqrt(T(d));
    Tensor<T> scores({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const T* qi = q.row(i);
        T* si = scores.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (causal && j > i) {
                si[j] = -std::numeric_limits<T>::infinity();
                continue;
            }
            const T* kj = k.row(j);
            T acc = 0;
            for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
            si[j] = acc * inv_sqrt;
        }
        macs::add(static_cast<std::uint64_t>(causal ? std::min(i + 1, m) : m) * d);
    }
    // max subtraction keeps the -inf entries at weight 0
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const T* si = scores.row(i);
        T* oi = out.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, si[j]);
        T sum = 0;
        for (std::size_t j = 0; j < m; ++j) {
            oi[j] = std::isinf(si[j]) && si[j] < 0 ? T(0) : std::exp(si[j] - mx);
            sum += oi[j];
        }
        T inv = T(1) / sum;
        for (std::size_t j = 0; j < m; ++j) oi[j] *= inv;
    }
    ensure_finite(out, "attention_weights");
    return out;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal) {
    if (k.rows() != v.rows()) throw DimensionError("attention: k/v row counts differ");
    return matmul(attention_weights(q, k, causal), v);
}

template <typename T>
struct AttnParams {
    Tensor<T> wq, wk, wv, wo;  // [d_model x d_model]
    std::size_t heads = 1;

    std::size_t d_model() const { return wq.cols(); }
    std::size_t head_dim() const { return d_model() / heads; }
};

/// Grow-with-length key/value memory, one pair of buffers per head. This is
/// exactly the per-token cost retention's constant state avoids.
template <typename T>
struct KvCache {
    std::size_t head_dim = 0;
    std::size_t len = 0;
    std::vector<std::vector<T>> k_heads, v_heads;  // [h][len * head_dim]

    KvCache() = default;
    KvCache(std::size_t heads, std::size_t hd)
        : head_dim(hd), k_heads(heads), v_heads(heads) {}

    std::size_t bytes() const {
        return 2 * k_heads.size() * len * head_dim * sizeof(T) + sizeof(len);
    }
};

/// Multi-head attention over x. Without a cache: full causal self-attention.
/// With a cache: rows are appended one at a time and attend over everything
/// cached so far (incremental decode).
template <typename T>
Tensor<T> mha_forward(const Tensor<T>& x, const AttnParams<T>& p, KvCache<T>* cache) {
    if (x.cols() != p.d_model())
        throw DimensionError("mha_forward: input width must equal d_model");
    std::size_t n = x.rows(), d = p.head_dim(), h = p.heads;
    Tensor<T> qf = matmul(x, p.wq);
    Tensor<T> kf = matmul(x, p.wk);
    Tensor<T> vf = matmul(x, p.wv);
    std::vector<Tensor<T>> heads(h);
    if (!cache) {
        for (std::size_t i = 0; i < h; ++i)
            heads[i] = attention(slice_cols(qf, i * d, (i + 1) * d),
                                 slice_cols(kf, i * d, (i + 1) * d),
                                 slice_cols(vf, i * d, (i + 1) * d), true);
    } else {
        if (cache->head_dim != d || cache->k_heads.size() != h)
            throw ContractError("mha_forward: cache shape mismatch");
        for (std::size_t i = 0; i < h; ++i) heads[i] = Tensor<T>({n, d});
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t i = 0; i < h; ++i) {
                auto& kc = cache->k_heads[i];
                auto& vc = cache->v_heads[i];
                kc.insert(kc.end(), kf.row(t) + i * d, kf.row(t) + (i + 1) * d);
                vc.insert(vc.end(), vf.row(t) + i * d, vf.row(t) + (i + 1) * d);
            }
            std::size_t len = cache->len + 1;
            T inv_sqrt = T(1) / std::sqrt(T(d));
            for (std::size_t i = 0; i < h; ++i) {
                const T* qt = qf.row(t) + i * d;
                const T* kc = cache->k_heads[i].data();
                const T* vc = cache->v_heads[i].data();
                std::vector<T> w(len);
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    T acc = 0;
                    const T* kj = kc + j * d;
                    for (std::size_t c = 0; c < d; ++c) acc += qt[c] * kj[c];
                    w[j] = acc * inv_sqrt;
                    mx = std::max(mx, w[j]);
                }
                macs::add(static_cast<std::uint64_t>(len) * d);
                T sum = 0;
                for (std::size_t j = 0; j < len; ++j) {
                    w[j] = std::exp(w[j] - mx);
                    sum += w[j];
                }
                T inv = T(1) / sum;
                T* out = heads[i].row(t);
                for (std::size_t j = 0; j < len; ++j) {
                    T wj = w[j] * inv;
                    const T* vj = vc + j * d;
                    for (std::size_t c = 0; c < d; ++c) out[c] += wj * vj[c];
                }
                macs::add(static_cast<std::uint64_t>(len) * d);
            }
            cache->len += 1;
        }
    }
    return matmul(concat_cols(heads), p.wo);
}

template <typename T>
struct AttnBlockParams {
    AttnParams<T> attn;
    Tensor<T> ln1_scale, ln1_shift;
    Tensor<T> ln2_scale, ln2_shift;
    Tensor<T> w1, w2;
};

/// Attention-baseline model: learned absolute position embeddings (the only
/// positional signal), attention blocks with the retention blocks' wiring,
/// final norm, tied output head.
template <typename T>
struct BaselineParams {
    Tensor<T> embedding;      // [vocab x d_model]
    Tensor<T> pos_embedding;  // [max_positions x d_model]
    std::vector<AttnBlockParams<T>> blocks;
    Tensor<T> final_scale, final_shift;
};

template <typename T = double>
BaselineParams<T> init_baseline(const ModelConfig& cfg) {
    cfg.validate();
    Prng rng(Prng::derive(cfg.seed, 1));
    std::size_t d = cfg.d_model, f = cfg.ffn();
    BaselineParams<T> p;
    double stddev = 1.0 / std::sqrt(double(d));
    p.embedding = detail::normal_init<T>(rng, {cfg.vocab_size, d}, stddev);
    p.pos_embedding = detail::normal_init<T>(rng, {cfg.max_positions, d}, stddev);
    p.blocks.resize(cfg.layers);
    for (auto& b : p.blocks) {
        b.ln1_scale = detail::const_vec<T>(d, T(1));
        b.ln1_shift = detail::const_vec<T>(d, T(0));
        b.attn.wq = detail::xavier_init<T>(rng, d, d);
        b.attn.wk = detail::xavier_init<T>(rng, d, d);
        b.attn.wv = detail::xavier_init<T>(rng, d, d);
        b.attn.wo = detail::xavier_init<T>(rng, d, d);
        b.attn.heads = cfg.heads;
        b.ln2_scale = detail::const_vec<T>(d, T(1));
        b.ln2_shift = detail::const_vec<T>(d, T(0));
        b.w1 = detail::xavier_init<T>(rng, d, f);
        b.w2 = detail::xavier_init<T>(rng, f, d);
    }
    p.final_scale = detail::const_vec<T>(d, T(1));
    p.final_shift = detail::const_vec<T>(d, T(0));
    return p;
}

template <typename T>
Tensor<T> attn_block_forward(const Tensor<T>& x, const AttnBlockParams<T>& b,
                             KvCache<T>* cache) {
    Tensor<T> ln1 = layer_norm(x, T(kLayerNormEps), b.ln1_scale, b.ln1_shift);
    Tensor<T> y = add(mha_forward(ln1, b.attn, cache), x);
    Tensor<T> ln2 = layer_norm(y, T(kLayerNormEps), b.ln2_scale, b.ln2_shift);
    return add(matmul(gelu(matmul(ln2, b.w1)), b.w2), y);
}

/// Per-decode-session state of the baseline: one KV cache per layer.
template <typename T>
struct BaselineDecodeState {
    std::vector<KvCache<T>> layers;
    std::size_t position = 0;

    std::size_t bytes() const {
        std::size_t b = sizeof(position);
        for (const auto& c : layers) b += c.bytes();
        return b;
    }
};

template <typename T>
BaselineDecodeState<T> make_baseline_state(const ModelConfig& cfg) {
    BaselineDecodeState<T> st;
    st.layers.assign(cfg.layers, KvCache<T>(cfg.heads, cfg.head_dim()));
    return st;
}

template <typename T>
Tensor<T> baseline_embed(const std::vector<int>& tokens, std::size_t start,
                         const BaselineParams<T>& p) {
    Tensor<T> x = gather_rows(p.embedding, tokens);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const T* pe = p.pos_embedding.row(start + i);
        T* xi = x.row(i);
        for (std::size_t c = 0; c < x.cols(); ++c) xi[c] += pe[c];
    }
    return x;
}

/// Full parallel forward of the baseline (used to validate the incremental
/// path); logits via the tied head.
template <typename T>
Tensor<T> baseline_forward(const std::vector<int>& tokens, const BaselineParams<T>& p,
                           const ModelConfig& cfg) {
    check_tokens(tokens, cfg);
    Tensor<T> x = baseline_embed(tokens, 0, p);
    for (const auto& b : p.blocks) x = attn_block_forward(x, b, (KvCache<T>*)nullptr);
    x = layer_norm(x, T(kLayerNormEps), p.final_scale, p.final_shift);
    return scale(matmul_bt(x, p.embedding), static_cast<T>(output_head_scale(cfg)));
}

template <typename T>
Tensor<T> baseline_decode_step(BaselineDecodeState<T>& state, int token,
                               const BaselineParams<T>& p, const ModelConfig& cfg) {
    if (state.position >= cfg.max_positions)
        throw InputError("baseline_decode_step: position exceeds max_positions");
    Tensor<T> x = baseline_embed(std::vector<int>{token}, state.position, p);
    for (std::size_t l = 0; l < p.blocks.size(); ++l)
        x = attn_block_forward(x, p.blocks[l], &state.layers[l]);
    x = layer_norm(x, T(kLayerNormEps), p.final_scale, p.final_shift);
    state.position += 1;
    Tensor<T> logits = scale(matmul_bt(x, p.embedding),
                             static_cast<T>(output_head_scale(cfg)));
    Tensor<T> row({cfg.vocab_size});
    std::copy(logits.data(), logits.data() + cfg.vocab_size, row.data());
    return row;
}

} // namespace retnet
