// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

#include "retnet/ops.hpp"
#include "retnet/retention.hpp"

// Gated multi-scale retention: full-width Q/K/V/G/O projections sliced into
// heads, one decay per head, per-head group normalization, swish gate.
namespace retnet {

inline constexpr double kGroupNormEps = 1e-6;

/// Per-head decays gamma_i = 1 - 2^(-5-i), strictly increasing in i.
template <typename T>
Tensor<T> head_gammas(std::size_t h) {
    if (h < 1) throw ParameterError("head_gammas: need at least one head");
    Tensor<T> g({h});
    for (std::size_t i = 0; i < h; ++i)
        g[i] = T(1) - static_cast<T>(std::exp2(-5.0 - static_cast<double>(i)));
    return g;
}

template <typename T>
struct MsrParams {
    Tensor<T> wq, wk, wv, wg, wo;      // [d_model x d_model]
    Tensor<T> gn_scale, gn_shift;      // [d_model]
    Tensor<T> gammas;                  // [h]
    XPos<T> xpos;                      // shared across heads
    std::size_t heads = 1;

    std::size_t d_model() const { return wq.cols(); }
    std::size_t head_dim() const { return d_model() / heads; }
};

template <typename T>
std::vector<RetentionState<T>> fresh_states(std::size_t heads, std::size_t head_dim) {
    return std::vector<RetentionState<T>>(heads, RetentionState<T>(head_dim));
}

/// One gated MSR layer pass over x [n x d_model]. In recurrent and chunkwise
/// modes `states` carries one RetentionState per head and is updated in
/// place; parallel mode is stateless and rejects a state list. Rows are
/// rotated at their absolute positions (the state's token count onward), so
/// a continued stream matches the parallel form run over the whole sequence.
template <typename T>
Tensor<T> msr_forward(const Tensor<T>& x, const MsrParams<T>& p, ExecMode mode,
                      std::type_identity_t<std::vector<RetentionState<T>>*> states,
                      std::size_t chunk_len, bool stabilized) {
    if (x.rank() != 2 || x.cols() != p.d_model())
        throw DimensionError("msr_forward: input width must equal d_model");
    if (p.d_model() % p.heads != 0)
        throw DimensionError("msr_forward: d_model not divisible by head count");
    if (mode == ExecMode::kParallel && states != nullptr)
        throw ContractError("msr_forward: parallel mode is stateless");
    if (mode != ExecMode::kParallel && states == nullptr)
        throw ContractError("msr_forward: recurrent/chunkwise mode needs a state list");
    if (states && states->size() != p.heads)
        throw ContractError("msr_forward: one state per head required");

    std::size_t n = x.rows(), d = p.head_dim();
    std::size_t pos0 = states ? (*states)[0].position : 0;
    if (states)
        for (const auto& st : *states)
            if (st.position != pos0)
                throw ContractError("msr_forward: head states out of step");

    Tensor<T> qf = matmul(x, p.wq);
    Tensor<T> kf = matmul(x, p.wk);
    Tensor<T> vf = matmul(x, p.wv);

    std::vector<Tensor<T>> head_out(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        // both sides take the forward rotation; the transposed product in the
        // retention kernel supplies the conjugation of the key side
        Tensor<T> q = xpos_apply(slice_cols(qf, h * d, (h + 1) * d), p.xpos, pos0, false);
        Tensor<T> k = xpos_apply(slice_cols(kf, h * d, (h + 1) * d), p.xpos, pos0, false);
        Tensor<T> v = slice_cols(vf, h * d, (h + 1) * d);
        T gamma = p.gammas[h];
        switch (mode) {
            case ExecMode::kParallel:
                head_out[h] = retention_parallel(q, k, v, gamma, stabilized);
                break;
            case ExecMode::kRecurrent: {
                Tensor<T> o({n, d});
                for (std::size_t t = 0; t < n; ++t) {
                    Tensor<T> qt({d}), kt({d}), vt({d});
                    std::copy(q.row(t), q.row(t) + d, qt.data());
                    std::copy(k.row(t), k.row(t) + d, kt.data());
                    std::copy(v.row(t), v.row(t) + d, vt.data());
                    Tensor<T> ot =
                        retention_recurrent_step((*states)[h], qt, kt, vt, gamma, stabilized);
                    std::copy(ot.data(), ot.data() + d, o.row(t));
                }
                head_out[h] = std::move(o);
                break;
            }
            case ExecMode::kChunkwise:
                head_out[h] =
                    retention_chunkwise(q, k, v, gamma, chunk_len, (*states)[h], stabilized);
                break;
        }
    }

    Tensor<T> y = group_norm(concat_cols(head_out), p.heads, T(kGroupNormEps), p.gn_scale,
                             p.gn_shift);
    Tensor<T> gate = swish(matmul(x, p.wg));
    return matmul(hadamard(gate, y), p.wo);
}

} // namespace retnet
