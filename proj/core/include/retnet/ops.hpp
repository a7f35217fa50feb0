// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "retnet/macs.hpp"
#include "retnet/tensor.hpp"

// Dense numerics underneath everything else. All functions are pure, operate
// on rank 1..2 tensors and use a fixed reduction order, so results are
// reproducible run to run at a fixed thread count (everything here is
// single-threaded).
namespace retnet {

enum class Broadcast { kNone, kScalar, kRowVector, kColVector };

/// Classifies b against matrix a under the supported broadcast forms:
/// identical shape, scalar [1], per-row vector [1 x n] (or rank-1 [n]
/// when unambiguous), per-column vector [m x 1]. Anything richer is
/// rejected with a DimensionError.
template <typename T>
Broadcast classify_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.same_shape(b)) return Broadcast::kNone;
    if (b.size() == 1) return Broadcast::kScalar;
    if (a.rank() == 2) {
        std::size_t m = a.rows(), n = a.cols();
        if (b.rank() == 2 && b.rows() == 1 && b.cols() == n) return Broadcast::kRowVector;
        if (b.rank() == 2 && b.rows() == m && b.cols() == 1) return Broadcast::kColVector;
        if (b.rank() == 1 && b.size() == n && m != n) return Broadcast::kRowVector;
    }
    throw DimensionError("broadcast: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T, typename F>
Tensor<T> broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* op) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    switch (classify_broadcast(a, b)) {
        case Broadcast::kNone:
            for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
            break;
        case Broadcast::kScalar: {
            T s = pb[0];
            for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], s);
            break;
        }
        case Broadcast::kRowVector: {
            std::size_t m = a.rows(), n = a.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) po[i * n + j] = f(pa[i * n + j], pb[j]);
            break;
        }
        case Broadcast::kColVector: {
            std::size_t m = a.rows(), n = a.cols();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) po[i * n + j] = f(pa[i * n + j], pb[i]);
            break;
        }
    }
    ensure_finite(out, op);
    return out;
}

/// Standard matrix product [m x k] * [k x n]. Accumulation order is fixed
/// (k outer, j inner) and deterministic.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() > 2 || b.rank() > 2)
        throw DimensionError("matmul: rank must be <= 2");
    std::size_t m = a.rows(), k = a.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()));
    std::size_t n = b.cols();
    Tensor<T> out(a.rank() == 1 ? std::vector<std::size_t>{n}
                                : std::vector<std::size_t>{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* orow = po + i * n;
        const T* arow = pa + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            const T* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    ensure_finite(out, "matmul");
    return out;
}

/// a * b^T without materializing the transpose. [m x k] * [n x k]^T -> [m x n].
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
    std::size_t m = a.rows(), k = a.cols();
    if (b.cols() != k)
        throw DimensionError("matmul_bt: inner extents differ");
    std::size_t n = b.rows();
    // transpose b up front; the transposed layout keeps the inner loop
    // contiguous, which is worth far more than the extra copy
    Tensor<T> bt({k, n});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
    Tensor<T> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* orow = out.row(i);
        for (std::size_t kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            const T* brow = bt.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    ensure_finite(out, "matmul_bt");
    return out;
}

/// a^T * b without materializing the transpose. [m x k]^T * [m x n] -> [k x n].
template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
    std::size_t m = a.rows(), k = a.cols();
    if (b.rows() != m)
        throw DimensionError("matmul_at: inner extents differ");
    std::size_t n = b.cols();
    Tensor<T> out({k, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        const T* brow = b.row(i);
        for (std::size_t kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            T* orow = out.row(kk);
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    ensure_finite(out, "matmul_at");
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank-2 only");
    std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

/// Elementwise product; b may broadcast as scalar / per-row / per-column.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_apply(a, b, [](T x, T y) { return x * y; }, "hadamard");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_apply(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    ensure_finite(out, "scale");
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= 0) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

/// x * sigmoid(x) (beta = 1, i.e. SiLU).
template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sigmoid_scalar(x[i]);
    ensure_finite(out, "swish");
    return out;
}

template <typename T>
T gelu_scalar(T x) {
    // tanh approximation, fixed so golden values match across builds
    const T c = T(0.7978845608028653558798921198687637);  // sqrt(2/pi)
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
    ensure_finite(out, "gelu");
    return out;
}

/// Per row and per group: subtract the group mean, divide by
/// sqrt(group variance + eps) (biased variance), then apply the affine
/// scale/shift. scale and shift have one entry per column.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, T eps, const Tensor<T>& scl,
                     const Tensor<T>& shift) {
    if (x.rank() != 2) throw DimensionError("group_norm: rank-2 input required");
    std::size_t n = x.rows(), d = x.cols();
    if (groups == 0 || d % groups != 0)
        throw DimensionError("group_norm: width not divisible by group count");
    if (scl.size() != d || shift.size() != d)
        throw DimensionError("group_norm: affine parameters must have one entry per column");
    std::size_t g = d / groups;
    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row(i);
        T* oi = out.row(i);
        for (std::size_t grp = 0; grp < groups; ++grp) {
            const T* xg = xi + grp * g;
            T mean = 0;
            for (std::size_t j = 0; j < g; ++j) mean += xg[j];
            mean /= T(g);
            T var = 0;
            for (std::size_t j = 0; j < g; ++j) {
                T dlt = xg[j] - mean;
                var += dlt * dlt;
            }
            var /= T(g);
            T inv = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < g; ++j) {
                std::size_t c = grp * g + j;
                oi[c] = (xg[j] - mean) * inv * scl[c] + shift[c];
            }
        }
    }
    ensure_finite(out, "group_norm");
    return out;
}

/// group_norm with a single group.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps, const Tensor<T>& scl, const Tensor<T>& shift) {
    return group_norm(x, 1, eps, scl, shift);
}

/// Row-wise softmax with max subtraction; each output row sums to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() > 2) throw DimensionError("softmax_rows: rank <= 2 required");
    std::size_t n = x.rows(), d = x.cols();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.data() + i * d;
        T* oi = out.data() + i * d;
        T mx = xi[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
        T sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        T inv = T(1) / sum;
        for (std::size_t j = 0; j < d; ++j) oi[j] *= inv;
    }
    ensure_finite(out, "softmax_rows");
    return out;
}

template <typename T>
T sum(const Tensor<T>& x) {
    T acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    return acc;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    macs::add(n);
    return acc;
}

/// Rows [r0, r1) as a new tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    if (x.rank() != 2 || r1 > x.rows() || r0 > r1)
        throw DimensionError("slice_rows: bad range");
    std::size_t d = x.cols();
    Tensor<T> out({r1 - r0, d});
    std::copy(x.row(r0), x.row(r0) + (r1 - r0) * d, out.data());
    return out;
}

/// Columns [c0, c1) as a new tensor; a rank-1 input yields a rank-1 slice.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
    if (x.rank() > 2 || c1 > x.cols() || c0 > c1)
        throw DimensionError("slice_cols: bad range");
    if (x.rank() == 1) {
        Tensor<T> out({c1 - c0});
        std::copy(x.data() + c0, x.data() + c1, out.data());
        return out;
    }
    std::size_t m = x.rows(), w = c1 - c0;
    Tensor<T> out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(x.row(i) + c0, x.row(i) + c1, out.row(i));
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    std::size_t d = parts[0].cols(), m = 0;
    for (const auto& p : parts) {
        if (p.cols() != d) throw DimensionError("concat_rows: column counts differ");
        m += p.rows();
    }
    Tensor<T> out({m, d});
    T* o = out.data();
    for (const auto& p : parts) {
        std::copy(p.data(), p.data() + p.size(), o);
        o += p.size();
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    std::size_t m = parts[0].rows(), d = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
        d += p.cols();
    }
    Tensor<T> out({m, d});
    for (std::size_t i = 0; i < m; ++i) {
        T* o = out.row(i);
        for (const auto& p : parts) {
            std::copy(p.row(i), p.row(i) + p.cols(), o);
            o += p.cols();
        }
    }
    return out;
}

/// Embedding lookup: one table row per id.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("gather_rows: rank-2 table required");
    std::size_t d = table.cols();
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
            throw InputError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
        std::copy(table.row(static_cast<std::size_t>(ids[i])),
                  table.row(static_cast<std::size_t>(ids[i])) + d, out.row(i));
    }
    return out;
}

} // namespace retnet
