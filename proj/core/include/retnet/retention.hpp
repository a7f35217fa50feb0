// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "retnet/ops.hpp"
#include "retnet/tensor.hpp"

// Single-head retention in its three equivalent execution forms, plus the
// decay mask and the pairwise-rotation positional modulation. All forms
// produce the same output for the same inputs (within fp tolerance); the
// recurrent and chunkwise forms additionally carry a d x d state across
// calls so decoding runs in constant memory.
namespace retnet {

enum class ExecMode { kParallel, kRecurrent, kChunkwise };

template <typename T>
inline void check_gamma(T gamma) {
    if (!(gamma > T(0)) || gamma > T(1))
        throw ParameterError("retention: gamma must be in (0, 1]");
}

/// gamma^0 .. gamma^(len-1) by iterated multiplication. Shared by the mask
/// and every retention kernel so the forms see identical decay values.
template <typename T>
std::vector<T> decay_powers(T gamma, std::size_t len) {
    std::vector<T> p(len);
    T acc = 1;
    for (std::size_t k = 0; k < len; ++k) {
        p[k] = acc;
        acc *= gamma;
    }
    return p;
}

/// Row sum of the decay mask at absolute position pos (0-based):
/// 1 + gamma + ... + gamma^pos. Used by the stabilized mode as a
/// deterministic per-row rescale; closed form keeps it O(1) at any position.
template <typename T>
T decay_row_sum(T gamma, std::size_t pos) {
    if (gamma == T(1)) return T(pos + 1);
    return (T(1) - std::pow(gamma, T(pos + 1))) / (T(1) - gamma);
}

template <typename T>
T stab_row_divisor(T gamma, std::size_t pos) {
    T r = decay_row_sum(gamma, pos);
    return std::max(std::abs(r), T(1));
}

/// Causal decay matrix: entries[n][m] = gamma^(n-m) for n >= m, else 0.
/// Jointly encodes the causal mask and exponential forgetting.
template <typename T>
struct DecayMask {
    std::size_t seq_len = 0;
    T gamma = 1;
    Tensor<T> entries;
};

template <typename T>
DecayMask<T> decay_mask(std::size_t seq_len, T gamma) {
    if (seq_len < 1) throw ParameterError("decay_mask: seq_len must be >= 1");
    check_gamma(gamma);
    DecayMask<T> mask;
    mask.seq_len = seq_len;
    mask.gamma = gamma;
    mask.entries = Tensor<T>({seq_len, seq_len});
    auto powers = decay_powers(gamma, seq_len);
    for (std::size_t n = 0; n < seq_len; ++n)
        for (std::size_t m = 0; m <= n; ++m) mask.entries.at(n, m) = powers[n - m];
    return mask;
}

/// Rotational position modulation: head_dim/2 angular frequencies, applied
/// as 2D rotations on (even, odd) coordinate pairs.
template <typename T>
struct XPos {
    std::size_t head_dim = 0;
    Tensor<T> theta;  // [head_dim / 2]
    bool trainable = false;
};

/// theta_j = base^(-2j / head_dim), the usual rotary frequency ladder.
template <typename T>
XPos<T> make_xpos(std::size_t head_dim, T base = T(10000), bool trainable = false) {
    if (head_dim == 0 || head_dim % 2 != 0)
        throw DimensionError("xpos: head_dim must be even and positive");
    XPos<T> x;
    x.head_dim = head_dim;
    x.trainable = trainable;
    x.theta = Tensor<T>({head_dim / 2});
    for (std::size_t j = 0; j < head_dim / 2; ++j)
        x.theta[j] = std::pow(base, T(-2.0) * T(j) / T(head_dim));
    return x;
}

/// Rotates each (even, odd) pair of row p by (start_position + p) * theta_j;
/// conjugate flips the rotation sign (the inverse modulation).
template <typename T>
Tensor<T> xpos_apply(const Tensor<T>& x, const XPos<T>& xpos, std::size_t start_position,
                     bool conjugate) {
    if (x.rank() != 2 || x.cols() != xpos.head_dim || xpos.head_dim % 2 != 0)
        throw DimensionError("xpos_apply: input width must equal the (even) head_dim");
    std::size_t n = x.rows(), d = x.cols(), half = d / 2;
    Tensor<T> out({n, d});
    T sign = conjugate ? T(-1) : T(1);
    for (std::size_t p = 0; p < n; ++p) {
        const T* xi = x.row(p);
        T* oi = out.row(p);
        T pos = T(start_position + p);
        for (std::size_t j = 0; j < half; ++j) {
            T a = sign * pos * xpos.theta[j];
            T c = std::cos(a), s = std::sin(a);
            T e = xi[2 * j], o = xi[2 * j + 1];
            oi[2 * j] = c * e - s * o;
            oi[2 * j + 1] = s * e + c * o;
        }
    }
    ensure_finite(out, "xpos_apply");
    return out;
}

/// As xpos_apply, but row positions cycle with the given period:
/// row p sits at absolute position start + (p mod period). Lets a batch of
/// equal-length sequences stacked row-wise share one rotation node.
template <typename T>
Tensor<T> xpos_apply_cyclic(const Tensor<T>& x, const XPos<T>& xpos,
                            std::size_t start_position, bool conjugate, std::size_t period) {
    if (period == 0) return xpos_apply(x, xpos, start_position, conjugate);
    if (x.rank() != 2 || x.cols() != xpos.head_dim)
        throw DimensionError("xpos_apply_cyclic: input width must equal head_dim");
    std::size_t n = x.rows(), d = x.cols(), half = d / 2;
    // only `period` distinct positions exist; tabulate their rotations once
    std::vector<T> cs(2 * period * half);
    T sign = conjugate ? T(-1) : T(1);
    for (std::size_t p = 0; p < period; ++p)
        for (std::size_t j = 0; j < half; ++j) {
            T a = sign * T(start_position + p) * xpos.theta[j];
            cs[2 * (p * half + j)] = std::cos(a);
            cs[2 * (p * half + j) + 1] = std::sin(a);
        }
    Tensor<T> out({n, d});
    for (std::size_t p = 0; p < n; ++p) {
        const T* xi = x.row(p);
        T* oi = out.row(p);
        const T* t = cs.data() + 2 * (p % period) * half;
        for (std::size_t j = 0; j < half; ++j) {
            T c = t[2 * j], s = t[2 * j + 1];
            T e = xi[2 * j], o = xi[2 * j + 1];
            oi[2 * j] = c * e - s * o;
            oi[2 * j + 1] = s * e + c * o;
        }
    }
    ensure_finite(out, "xpos_apply_cyclic");
    return out;
}

/// Per-head recurrent state: the running d x d accumulator plus the count of
/// tokens absorbed so far. A fresh state is all zeros at position 0.
template <typename T>
struct RetentionState {
    Tensor<T> s;  // [head_dim x head_dim]
    std::size_t position = 0;

    RetentionState() = default;
    explicit RetentionState(std::size_t head_dim) : s({head_dim, head_dim}) {}

    std::size_t bytes() const { return s.size() * sizeof(T) + sizeof(std::size_t); }
};

/// Parallel form: out = (q k^T elementwise-masked by the decay matrix) v,
/// computed causally (row n never reads rows > n). When stabilized, q k^T is
/// scaled by 1/sqrt(head_dim) and each output row is divided by
/// max(|row sum of the decay mask|, 1).
template <typename T>
Tensor<T> retention_parallel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             T gamma, bool stabilized = false) {
    check_gamma(gamma);
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("retention_parallel: q, k, v must share an [n x d] shape");
    std::size_t n = q.rows(), d = q.cols();
    auto powers = decay_powers(gamma, n);
    T qk_scale = stabilized ? T(1) / std::sqrt(T(d)) : T(1);
    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const T* qi = q.row(i);
        T* oi = out.row(i);
        for (std::size_t m = 0; m <= i; ++m) {
            const T* km = k.row(m);
            T w = 0;
            for (std::size_t c = 0; c < d; ++c) w += qi[c] * km[c];
            w *= qk_scale * powers[i - m];
            const T* vm = v.row(m);
            for (std::size_t c = 0; c < d; ++c) oi[c] += w * vm[c];
        }
        macs::add(static_cast<std::uint64_t>(i + 1) * 2 * d);
        if (stabilized) {
            T inv = T(1) / stab_row_divisor(gamma, i);
            for (std::size_t c = 0; c < d; ++c) oi[c] *= inv;
        }
    }
    ensure_finite(out, "retention_parallel");
    return out;
}

/// Causal coefficient matrix of the parallel form: entry [n][m] is
/// qk_scale * gamma^(n-m) (divided by the stabilizer row sum when enabled)
/// for m <= n, zero above the diagonal.
template <typename T>
Tensor<T> retention_coefficients(std::size_t n, T gamma, bool stabilized) {
    check_gamma(gamma);
    auto powers = decay_powers(gamma, n);
    Tensor<T> coef({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        T row_scale = 1;
        if (stabilized) row_scale /= stab_row_divisor(gamma, i);
        for (std::size_t m = 0; m <= i; ++m) coef.at(i, m) = powers[i - m] * row_scale;
    }
    return coef;
}

/// Matmul-shaped evaluation of the parallel form, used by the training tape:
/// out = ((q k^T) * coef) v with the qk scale folded into q. Numerically
/// equal to retention_parallel to roundoff; the fused kernel stays the
/// inference path because it never reads future rows.
template <typename T>
Tensor<T> retention_parallel_via_matmul(const Tensor<T>& q, const Tensor<T>& k,
                                        const Tensor<T>& v, T gamma, bool stabilized) {
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("retention: q, k, v must share an [n x d] shape");
    std::size_t n = q.rows(), d = q.cols();
    Tensor<T> coef = retention_coefficients(n, gamma, stabilized);
    Tensor<T> qs = stabilized ? scale(q, T(1) / std::sqrt(T(d))) : q;
    Tensor<T> w = hadamard(matmul(qs, transpose(k)), coef);
    return matmul(w, v);
}

/// Recurrent form, one token: s_n = gamma * s_{n-1} + k_n^T (outer) v_n,
/// o_n = q_n * s_n. The state position supplies the absolute index for the
/// stabilized rescale so the forms stay interchangeable mid-stream.
template <typename T>
Tensor<T> retention_recurrent_step(RetentionState<T>& state, const Tensor<T>& q_n,
                                   const Tensor<T>& k_n, const Tensor<T>& v_n, T gamma,
                                   bool stabilized = false) {
    check_gamma(gamma);
    std::size_t d = q_n.size();
    if (k_n.size() != d || v_n.size() != d)
        throw DimensionError("retention_recurrent_step: q, k, v widths differ");
    if (state.s.size() != d * d) {
        if (state.s.empty() && state.position == 0)
            state.s = Tensor<T>({d, d});
        else
            throw DimensionError("retention_recurrent_step: state width mismatch");
    }
    T* s = state.s.data();
    const T* kp = k_n.data();
    const T* vp = v_n.data();
    for (std::size_t i = 0; i < d; ++i) {
        T ki = kp[i];
        T* srow = s + i * d;
        for (std::size_t j = 0; j < d; ++j) srow[j] = gamma * srow[j] + ki * vp[j];
    }
    macs::add(2 * static_cast<std::uint64_t>(d) * d);
    Tensor<T> o({d});
    const T* qp = q_n.data();
    T qk_scale = stabilized ? T(1) / std::sqrt(T(d)) : T(1);
    for (std::size_t i = 0; i < d; ++i) {
        T qi = qp[i] * qk_scale;
        const T* srow = s + i * d;
        for (std::size_t j = 0; j < d; ++j) o[j] += qi * srow[j];
    }
    macs::add(static_cast<std::uint64_t>(d) * d);
    if (stabilized) {
        T inv = T(1) / stab_row_divisor(gamma, state.position);
        for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
    }
    state.position += 1;
    ensure_finite(o, "retention_recurrent_step");
    return o;
}

/// Chunkwise form: parallel within chunks of length B, recurrent hand-off
/// between chunks. The final chunk may be ragged; its decay exponents use the
/// actual chunk length. q and k must already carry the positional modulation
/// for their absolute positions (initial_state.position onward).
template <typename T>
Tensor<T> retention_chunkwise(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              T gamma, std::size_t chunk_len, RetentionState<T>& state,
                              bool stabilized = false) {
    check_gamma(gamma);
    if (chunk_len < 1) throw ParameterError("retention_chunkwise: chunk length must be >= 1");
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("retention_chunkwise: q, k, v must share an [n x d] shape");
    std::size_t n = q.rows(), d = q.cols();
    if (state.s.empty() && state.position == 0) state.s = Tensor<T>({d, d});
    if (state.s.size() != d * d)
        throw DimensionError("retention_chunkwise: state width mismatch");

    T qk_scale = stabilized ? T(1) / std::sqrt(T(d)) : T(1);
    Tensor<T> out({n, d});
    auto powers = decay_powers(gamma, chunk_len + 1);
    for (std::size_t c0 = 0; c0 < n; c0 += chunk_len) {
        std::size_t blen = std::min(chunk_len, n - c0);
        // inner: causal parallel within the chunk; cross: q against the
        // carried state, row j scaled by gamma^(j+1)
        for (std::size_t j = 0; j < blen; ++j) {
            const T* qj = q.row(c0 + j);
            T* oj = out.row(c0 + j);
            for (std::size_t m = 0; m <= j; ++m) {
                const T* km = k.row(c0 + m);
                T w = 0;
                for (std::size_t cc = 0; cc < d; ++cc) w += qj[cc] * km[cc];
                w *= qk_scale * powers[j - m];
                const T* vm = v.row(c0 + m);
                for (std::size_t cc = 0; cc < d; ++cc) oj[cc] += w * vm[cc];
            }
            macs::add(static_cast<std::uint64_t>(j + 1) * 2 * d);
            T xi = powers[j + 1] * qk_scale;
            const T* s = state.s.data();
            for (std::size_t i = 0; i < d; ++i) {
                T qi = qj[i] * xi;
                const T* srow = s + i * d;
                for (std::size_t cc = 0; cc < d; ++cc) oj[cc] += qi * srow[cc];
            }
            macs::add(static_cast<std::uint64_t>(d) * d);
            if (stabilized) {
                T inv = T(1) / stab_row_divisor(gamma, state.position + c0 + j);
                for (std::size_t cc = 0; cc < d; ++cc) oj[cc] *= inv;
            }
        }
        // state update: R_i = K^T (V scaled by zeta) + gamma^B' R_{i-1},
        // zeta_m = gamma^(B' - m - 1)
        T chunk_decay = powers[blen];
        T* s = state.s.data();
        for (std::size_t i = 0; i < d * d; ++i) s[i] *= chunk_decay;
        macs::add(static_cast<std::uint64_t>(d) * d);
        for (std::size_t m = 0; m < blen; ++m) {
            T zeta = powers[blen - m - 1];
            const T* km = k.row(c0 + m);
            const T* vm = v.row(c0 + m);
            for (std::size_t i = 0; i < d; ++i) {
                T kz = km[i] * zeta;
                T* srow = s + i * d;
                for (std::size_t cc = 0; cc < d; ++cc) srow[cc] += kz * vm[cc];
            }
            macs::add(2 * static_cast<std::uint64_t>(d) * d);
        }
    }
    state.position += n;
    ensure_finite(out, "retention_chunkwise");
    return out;
}

} // namespace retnet
