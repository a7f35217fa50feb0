// SPDX-License-Identifier: Apache-2.0
#include "retnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "retnet/ops.hpp"
#include "retnet/retention.hpp"

namespace retnet {

namespace {

Tensor64 zeros_like(const Tensor64& t) { return Tensor64(t.shape()); }

void accum(Tensor64& dst, const Tensor64& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    if (!dst.same_shape(src)) throw DimensionError("backward: gradient shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void ensure_zero(Tensor64& g, const Tensor64& like) {
    if (g.empty()) g = zeros_like(like);
}

XPos<double> xpos_from(const Tensor64& theta, std::size_t head_dim) {
    XPos<double> x;
    x.head_dim = head_dim;
    x.theta = theta;
    return x;
}

double gamma_of(const Node& n, const std::vector<Node>& nodes) {
    if (n.inputs.size() >= 4) return nodes[n.inputs[3]].value[0];
    return n.scalar;
}

// ---------------------------------------------------------------------------
// multi-sequence retention kernels: the inputs stack several equal-length
// sequences row-wise; one shared workspace serves every block, which keeps
// the training hot path free of per-row tensor allocations.

struct RetSeqWork {
    std::size_t n = 0, d = 0;
    std::vector<double> kt;    // [d x n] transposed block
    std::vector<double> dwqk;  // [n x n] score gradients
    Tensor64 coef;             // [n x n] decay/stabilizer coefficients

    RetSeqWork(std::size_t n_, std::size_t d_, double gamma, bool stabilized)
        : n(n_), d(d_), kt(d_ * n_), dwqk(n_ * n_),
          coef(retention_coefficients(n_, gamma, stabilized)) {}
};

void transpose_block(const double* src, std::size_t n, std::size_t d, double* dst) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) dst[c * n + i] = src[i * d + c];
}

// out_b = ((q_b k_b^T) * coef) v_b for one contiguous block; wqk holds the
// scaled raw scores afterwards (kept for the backward pass)
void ret_seq_forward_block(const double* q, const double* k, const double* v, double* out,
                           double qk_scale, RetSeqWork& w, double* wqk) {
    std::size_t n = w.n, d = w.d;
    transpose_block(k, n, d, w.kt.data());
    std::fill(wqk, wqk + n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* wrow = wqk + i * n;
        const double* qi = q + i * d;
        for (std::size_t c = 0; c < d; ++c) {
            double qv = qi[c] * qk_scale;
            const double* krow = w.kt.data() + c * n;
            for (std::size_t j = 0; j <= i; ++j) wrow[j] += qv * krow[j];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = out + i * d;
        std::fill(orow, orow + d, 0.0);
        const double* wrow = wqk + i * n;
        const double* crow = w.coef.row(i);
        for (std::size_t j = 0; j <= i; ++j) {
            double wc = wrow[j] * crow[j];
            const double* vj = v + j * d;
            for (std::size_t c = 0; c < d; ++c) orow[c] += wc * vj[c];
        }
    }
    macs::add(static_cast<std::uint64_t>(n) * (n + 1) * d);
}

void ret_seq_backward_block(const double* q, const double* k, const double* v,
                            const double* g, const double* wqk, double* dq, double* dk,
                            double* dv, double qk_scale, RetSeqWork& w, double gamma,
                            bool stabilized, double* dgamma) {
    std::size_t n = w.n, d = w.d;
    // dW = g v^T over the causal triangle, via a transposed v block
    transpose_block(v, n, d, w.kt.data());
    std::fill(w.dwqk.begin(), w.dwqk.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* drow = w.dwqk.data() + i * n;
        const double* gi = g + i * d;
        for (std::size_t c = 0; c < d; ++c) {
            double gv = gi[c];
            const double* vrow = w.kt.data() + c * n;
            for (std::size_t j = 0; j <= i; ++j) drow[j] += gv * vrow[j];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g + i * d;
        const double* qi = q + i * d;
        double* dqi = dq + i * d;
        const double* wrow = wqk + i * n;
        const double* drow = w.dwqk.data() + i * n;
        const double* crow = w.coef.row(i);
        for (std::size_t j = 0; j <= i; ++j) {
            double cj = crow[j];
            double u = drow[j] * cj;          // d loss / d (qk scores)
            double wc = wrow[j] * cj;         // forward mixing weight
            const double* kj = k + j * d;
            double* dkj = dk + j * d;
            double* dvj = dv + j * d;
            for (std::size_t c = 0; c < d; ++c) {
                dqi[c] += u * qk_scale * kj[c];
                dkj[c] += u * qk_scale * qi[c];
                dvj[c] += wc * gi[c];
            }
        }
    }
    macs::add(2 * static_cast<std::uint64_t>(n) * (n + 1) * d);
    if (dgamma) {
        auto powers = decay_powers(gamma, n);
        std::vector<double> rinv(n, 1.0), rprime(n, 0.0);
        if (stabilized) {
            double r = 1.0, rp = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (i > 0) {
                    rp = r + gamma * rp;
                    r = 1.0 + gamma * r;
                }
                rinv[i] = 1.0 / stab_row_divisor(gamma, i);
                rprime[i] = rp;
            }
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* wrow = wqk + i * n;
            const double* drow = w.dwqk.data() + i * n;
            for (std::size_t j = 0; j <= i; ++j) {
                std::size_t delta = i - j;
                double dpow = delta == 0 ? 0.0 : double(delta) * powers[delta - 1];
                double dcoef = stabilized
                                   ? rinv[i] * (dpow - powers[delta] * rprime[i] * rinv[i])
                                   : dpow;
                acc += drow[j] * wrow[j] * dcoef;
            }
        }
        *dgamma += acc;
    }
}

Tensor64 retention_seq_forward(const Tensor64& q, const Tensor64& k, const Tensor64& v,
                               double gamma, bool stabilized, std::size_t seq_len,
                               std::shared_ptr<const std::vector<double>>* stash_out) {
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("retention_seq: q, k, v must share an [n x d] shape");
    if (seq_len == 0 || q.rows() % seq_len != 0)
        throw ContractError("retention_seq: rows are not a multiple of seq_len");
    check_gamma(gamma);
    std::size_t d = q.cols(), blocks = q.rows() / seq_len;
    double qk_scale = stabilized ? 1.0 / std::sqrt(double(d)) : 1.0;
    Tensor64 out(q.shape());
    RetSeqWork work(seq_len, d, gamma, stabilized);
    auto scores = std::make_shared<std::vector<double>>(blocks * seq_len * seq_len);
    for (std::size_t b = 0; b < blocks; ++b) {
        std::size_t off = b * seq_len * d;
        ret_seq_forward_block(q.data() + off, k.data() + off, v.data() + off,
                              out.data() + off, qk_scale, work,
                              scores->data() + b * seq_len * seq_len);
    }
    if (stash_out) *stash_out = std::move(scores);
    ensure_finite(out, "retention_seq");
    return out;
}

/// Forward evaluation of one node from already-computed input values. Used
/// both when recording and when replaying, so replay is bit-identical by
/// construction.
Tensor64 compute(Node& n, const std::vector<Node>& nodes) {
    auto in = [&](std::size_t i) -> const Tensor64& { return nodes[n.inputs[i]].value; };
    switch (n.kind) {
        case OpKind::kLeaf:
            return n.value;
        case OpKind::kMatMul:
            return matmul(in(0), in(1));
        case OpKind::kMatMulBT:
            return matmul_bt(in(0), in(1));
        case OpKind::kHadamard:
            return hadamard(in(0), in(1));
        case OpKind::kAdd:
            return add(in(0), in(1));
        case OpKind::kScale:
            return scale(in(0), n.scalar);
        case OpKind::kSwish:
            return swish(in(0));
        case OpKind::kGelu:
            return gelu(in(0));
        case OpKind::kGroupNorm:
            return group_norm(in(0), n.a, n.scalar, in(1), in(2));
        case OpKind::kSoftmaxRows:
            return softmax_rows(in(0));
        case OpKind::kSum:
            return Tensor64::scalar(sum(in(0)));
        case OpKind::kGatherRows:
            return gather_rows(in(0), *n.ids);
        case OpKind::kConcatCols: {
            std::vector<Tensor64> parts;
            parts.reserve(n.inputs.size());
            for (int id : n.inputs) parts.push_back(nodes[id].value);
            return concat_cols(parts);
        }
        case OpKind::kSliceCols:
            return slice_cols(in(0), n.a, n.b);
        case OpKind::kConcatRows: {
            std::vector<Tensor64> parts;
            parts.reserve(n.inputs.size());
            for (int id : n.inputs) parts.push_back(nodes[id].value);
            return concat_rows(parts);
        }
        case OpKind::kSliceRows:
            return slice_rows(in(0), n.a, n.b);
        case OpKind::kCrossEntropy:
            return Tensor64::scalar(cross_entropy_value(in(0), *n.ids, *n.mask));
        case OpKind::kRetention:
            return retention_parallel_via_matmul(in(0), in(1), in(2), gamma_of(n, nodes),
                                                 n.flag);
        case OpKind::kRetentionSeq:
            return retention_seq_forward(in(0), in(1), in(2), gamma_of(n, nodes), n.flag,
                                         n.c, &n.stash);
        case OpKind::kXPos:
            return xpos_apply_cyclic(in(0), xpos_from(in(1), in(0).cols()), n.a, n.flag,
                                     n.c);
    }
    throw ContractError("tape: unknown op kind");
}

} // namespace

int Tape::check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("tape: node id out of range");
    return id;
}

int Tape::push(Node n) {
    for (int id : n.inputs) {
        check(id);
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    if (n.kind != OpKind::kLeaf) n.value = compute(n, nodes_);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor64 value, bool requires_grad) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    Node n;
    n.kind = OpKind::kMatMul;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Tape::matmul_bt(int a, int b) {
    Node n;
    n.kind = OpKind::kMatMulBT;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
    Node n;
    n.kind = OpKind::kHadamard;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    Node n;
    n.kind = OpKind::kAdd;
    n.inputs = {a, b};
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    Node n;
    n.kind = OpKind::kScale;
    n.inputs = {a};
    n.scalar = s;
    return push(std::move(n));
}

int Tape::swish(int a) {
    Node n;
    n.kind = OpKind::kSwish;
    n.inputs = {a};
    return push(std::move(n));
}

int Tape::gelu(int a) {
    Node n;
    n.kind = OpKind::kGelu;
    n.inputs = {a};
    return push(std::move(n));
}

int Tape::group_norm(int x, int scl, int shift, std::size_t groups, double eps) {
    Node n;
    n.kind = OpKind::kGroupNorm;
    n.inputs = {x, scl, shift};
    n.a = groups;
    n.scalar = eps;
    return push(std::move(n));
}

int Tape::layer_norm(int x, int scl, int shift, double eps) {
    return group_norm(x, scl, shift, 1, eps);
}

int Tape::softmax_rows(int a) {
    Node n;
    n.kind = OpKind::kSoftmaxRows;
    n.inputs = {a};
    return push(std::move(n));
}

int Tape::sum(int a) {
    Node n;
    n.kind = OpKind::kSum;
    n.inputs = {a};
    return push(std::move(n));
}

int Tape::gather_rows(int table, std::vector<int> ids) {
    Node n;
    n.kind = OpKind::kGatherRows;
    n.inputs = {table};
    n.ids = std::make_shared<const std::vector<int>>(std::move(ids));
    return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
    Node n;
    n.kind = OpKind::kConcatCols;
    n.inputs = parts;
    return push(std::move(n));
}

int Tape::slice_cols(int a, std::size_t c0, std::size_t c1) {
    Node n;
    n.kind = OpKind::kSliceCols;
    n.inputs = {a};
    n.a = c0;
    n.b = c1;
    return push(std::move(n));
}

int Tape::concat_rows(const std::vector<int>& parts) {
    Node n;
    n.kind = OpKind::kConcatRows;
    n.inputs = parts;
    return push(std::move(n));
}

int Tape::slice_rows(int a, std::size_t r0, std::size_t r1) {
    Node n;
    n.kind = OpKind::kSliceRows;
    n.inputs = {a};
    n.a = r0;
    n.b = r1;
    return push(std::move(n));
}

int Tape::cross_entropy(int logits, std::vector<int> targets, std::vector<std::uint8_t> mask) {
    Node n;
    n.kind = OpKind::kCrossEntropy;
    n.inputs = {logits};
    n.ids = std::make_shared<const std::vector<int>>(std::move(targets));
    n.mask = std::make_shared<const std::vector<std::uint8_t>>(std::move(mask));
    return push(std::move(n));
}

int Tape::retention(int q, int k, int v, double gamma, bool stabilized) {
    check_gamma(gamma);
    Node n;
    n.kind = OpKind::kRetention;
    n.inputs = {q, k, v};
    n.scalar = gamma;
    n.flag = stabilized;
    return push(std::move(n));
}

int Tape::retention(int q, int k, int v, int gamma_node, bool stabilized) {
    if (value(gamma_node).size() != 1)
        throw ContractError("retention: gamma node must hold a single value");
    Node n;
    n.kind = OpKind::kRetention;
    n.inputs = {q, k, v, gamma_node};
    n.flag = stabilized;
    return push(std::move(n));
}

int Tape::retention_seq(int q, int k, int v, double gamma, bool stabilized,
                        std::size_t seq_len) {
    check_gamma(gamma);
    Node n;
    n.kind = OpKind::kRetentionSeq;
    n.inputs = {q, k, v};
    n.scalar = gamma;
    n.flag = stabilized;
    n.c = seq_len;
    return push(std::move(n));
}

int Tape::retention_seq(int q, int k, int v, int gamma_node, bool stabilized,
                        std::size_t seq_len) {
    if (value(gamma_node).size() != 1)
        throw ContractError("retention_seq: gamma node must hold a single value");
    Node n;
    n.kind = OpKind::kRetentionSeq;
    n.inputs = {q, k, v, gamma_node};
    n.flag = stabilized;
    n.c = seq_len;
    return push(std::move(n));
}

int Tape::xpos(int x, int theta, std::size_t start, bool conjugate, std::size_t period) {
    Node n;
    n.kind = OpKind::kXPos;
    n.inputs = {x, theta};
    n.a = start;
    n.c = period;
    n.flag = conjugate;
    return push(std::move(n));
}

bool Tape::replay_matches() const {
    std::vector<Node> replay = nodes_;
    for (auto& n : replay) {
        if (n.kind == OpKind::kLeaf) continue;
        Tensor64 v = compute(n, replay);
        if (v.shape() != n.value.shape()) return false;
        if (std::memcmp(v.data(), n.value.data(), v.size() * sizeof(double)) != 0)
            return false;
        n.value = std::move(v);
    }
    return true;
}

double cross_entropy_value(const Tensor64& logits, const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 2 || targets.size() != logits.rows() || mask.size() != logits.rows())
        throw DimensionError("cross_entropy: logits/targets/mask disagree");
    std::size_t n = logits.rows(), vsz = logits.cols();
    std::size_t m = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vsz)
            throw InputError("cross_entropy: target id out of range");
        const double* row = logits.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < vsz; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < vsz; ++j) s += std::exp(row[j] - mx);
        total += mx + std::log(s) - row[static_cast<std::size_t>(targets[i])];
        ++m;
    }
    if (m == 0) throw ContractError("cross_entropy: empty mask");
    double loss = total / static_cast<double>(m);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

namespace {

void backward_group_norm(const Node& n, const std::vector<Node>& nodes, const Tensor64& g,
                         Tensor64& dx, Tensor64& dscale, Tensor64& dshift) {
    const Tensor64& x = nodes[n.inputs[0]].value;
    const Tensor64& scl = nodes[n.inputs[1]].value;
    std::size_t rows = x.rows(), d = x.cols(), groups = n.a, gsz = d / groups;
    double eps = n.scalar;
    std::vector<double> xhat(gsz), dxh(gsz);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = x.row(i);
        const double* gi = g.row(i);
        double* dxi = dx.row(i);
        for (std::size_t grp = 0; grp < groups; ++grp) {
            const double* xg = xi + grp * gsz;
            double mean = 0;
            for (std::size_t j = 0; j < gsz; ++j) mean += xg[j];
            mean /= double(gsz);
            double var = 0;
            for (std::size_t j = 0; j < gsz; ++j) {
                double dvj = xg[j] - mean;
                var += dvj * dvj;
            }
            var /= double(gsz);
            double inv = 1.0 / std::sqrt(var + eps);
            double mean_dxh = 0, mean_dxh_xhat = 0;
            for (std::size_t j = 0; j < gsz; ++j) {
                std::size_t c = grp * gsz + j;
                xhat[j] = (xg[j] - mean) * inv;
                dxh[j] = gi[c] * scl[c];
                dshift[c] += gi[c];
                dscale[c] += gi[c] * xhat[j];
                mean_dxh += dxh[j];
                mean_dxh_xhat += dxh[j] * xhat[j];
            }
            mean_dxh /= double(gsz);
            mean_dxh_xhat /= double(gsz);
            for (std::size_t j = 0; j < gsz; ++j)
                dxi[grp * gsz + j] += inv * (dxh[j] - mean_dxh - xhat[j] * mean_dxh_xhat);
        }
    }
}

void backward_retention(const Node& n, const std::vector<Node>& nodes, const Tensor64& g,
                        Tensor64& dq, Tensor64& dk, Tensor64& dv, double* dgamma) {
    const Tensor64& q = nodes[n.inputs[0]].value;
    const Tensor64& k = nodes[n.inputs[1]].value;
    const Tensor64& v = nodes[n.inputs[2]].value;
    double gamma = gamma_of(n, nodes);
    std::size_t rows = q.rows(), d = q.cols();
    bool stabilized = n.flag;

    // same decomposition as the forward: out = ((qs k^T) * coef) v
    Tensor64 coef = retention_coefficients(rows, gamma, stabilized);
    Tensor64 qs = stabilized ? scale(q, 1.0 / std::sqrt(double(d))) : q;
    Tensor64 w_qk = matmul(qs, transpose(k));
    Tensor64 w = hadamard(w_qk, coef);
    Tensor64 dw = matmul(g, transpose(v));
    Tensor64 dwqk = hadamard(dw, coef);

    accum(dv, matmul_at(w, g));
    Tensor64 dqs = matmul(dwqk, k);
    accum(dq, stabilized ? scale(dqs, 1.0 / std::sqrt(double(d))) : dqs);
    accum(dk, matmul_at(dwqk, qs));

    if (dgamma) {
        auto powers = decay_powers(gamma, rows);
        std::vector<double> rinv(rows, 1.0), rprime(rows, 0.0);
        if (stabilized) {
            // r_i = 1 + gamma r_{i-1}; r'_i = r_{i-1} + gamma r'_{i-1}
            double r = 1.0, rp = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                if (i > 0) {
                    rp = r + gamma * rp;
                    r = 1.0 + gamma * r;
                }
                rinv[i] = 1.0 / stab_row_divisor(gamma, i);
                rprime[i] = rp;
            }
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t m = 0; m <= i; ++m) {
                std::size_t delta = i - m;
                double dpow = delta == 0 ? 0.0 : double(delta) * powers[delta - 1];
                double dcoef = stabilized
                                   ? rinv[i] * (dpow - powers[delta] * rprime[i] * rinv[i])
                                   : dpow;
                acc += dw.at(i, m) * w_qk.at(i, m) * dcoef;
            }
        *dgamma += acc;
    }
}

void backward_xpos(const Node& n, const std::vector<Node>& nodes, const Tensor64& g,
                   Tensor64& dx, Tensor64* dtheta) {
    const Tensor64& x = nodes[n.inputs[0]].value;
    const Tensor64& theta = nodes[n.inputs[1]].value;
    std::size_t rows = x.rows(), d = x.cols(), half = d / 2;
    double sign = n.flag ? -1.0 : 1.0;
    std::size_t period = n.c ? n.c : rows;
    std::vector<double> cs(2 * period * half);
    for (std::size_t p = 0; p < period; ++p)
        for (std::size_t j = 0; j < half; ++j) {
            double a = sign * double(n.a + p) * theta[j];
            cs[2 * (p * half + j)] = std::cos(a);
            cs[2 * (p * half + j) + 1] = std::sin(a);
        }
    for (std::size_t p = 0; p < rows; ++p) {
        const double* xi = x.row(p);
        const double* gi = g.row(p);
        double* dxi = dx.row(p);
        double pos = double(n.a + (p % period));
        const double* tbl = cs.data() + 2 * (p % period) * half;
        for (std::size_t j = 0; j < half; ++j) {
            double c = tbl[2 * j], s = tbl[2 * j + 1];
            double ge = gi[2 * j], go = gi[2 * j + 1];
            // dL/dx = R(-a) g
            dxi[2 * j] += c * ge + s * go;
            dxi[2 * j + 1] += -s * ge + c * go;
            if (dtheta) {
                double e = xi[2 * j], o = xi[2 * j + 1];
                // d(out)/da = R(a + pi/2) x
                double de = -s * e - c * o;
                double dodd = c * e - s * o;
                (*dtheta)[j] += sign * pos * (ge * de + go * dodd);
            }
        }
    }
}

} // namespace

std::vector<Tensor64> backward(const Tape& tape, int loss) {
    const auto& nodes = tape.nodes();
    if (loss < 0 || static_cast<std::size_t>(loss) >= nodes.size())
        throw ContractError("backward: loss id out of range");
    if (nodes[static_cast<std::size_t>(loss)].value.size() != 1)
        throw ContractError("backward: loss must be scalar");

    std::vector<Tensor64> grads(nodes.size());
    grads[static_cast<std::size_t>(loss)] = Tensor64::scalar(1.0);

    for (int id = loss; id >= 0; --id) {
        const Node& n = nodes[static_cast<std::size_t>(id)];
        Tensor64& g = grads[static_cast<std::size_t>(id)];
        if (g.empty() || !n.requires_grad || n.kind == OpKind::kLeaf) continue;
        auto want = [&](std::size_t slot) {
            return nodes[n.inputs[slot]].requires_grad;
        };
        auto gslot = [&](std::size_t slot) -> Tensor64& {
            return grads[n.inputs[slot]];
        };
        auto inval = [&](std::size_t slot) -> const Tensor64& {
            return nodes[n.inputs[slot]].value;
        };
        switch (n.kind) {
            case OpKind::kLeaf:
                break;
            case OpKind::kMatMul:
                if (want(0)) accum(gslot(0), matmul_bt(g, inval(1)));
                if (want(1)) accum(gslot(1), matmul_at(inval(0), g));
                break;
            case OpKind::kMatMulBT:
                if (want(0)) accum(gslot(0), matmul(g, inval(1)));
                if (want(1)) accum(gslot(1), matmul_at(g, inval(0)));
                break;
            case OpKind::kHadamard: {
                const Tensor64& a = inval(0);
                const Tensor64& b = inval(1);
                Broadcast bc = classify_broadcast(a, b);
                if (want(0)) accum(gslot(0), hadamard(g, b));  // same broadcast applies
                if (want(1)) {
                    Tensor64& db = gslot(1);
                    ensure_zero(db, b);
                    switch (bc) {
                        case Broadcast::kNone:
                            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
                            break;
                        case Broadcast::kScalar:
                            for (std::size_t i = 0; i < g.size(); ++i) db[0] += g[i] * a[i];
                            break;
                        case Broadcast::kRowVector: {
                            std::size_t m = a.rows(), w = a.cols();
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < w; ++j)
                                    db[j] += g[i * w + j] * a[i * w + j];
                            break;
                        }
                        case Broadcast::kColVector: {
                            std::size_t m = a.rows(), w = a.cols();
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < w; ++j)
                                    db[i] += g[i * w + j] * a[i * w + j];
                            break;
                        }
                    }
                }
                break;
            }
            case OpKind::kAdd: {
                const Tensor64& a = inval(0);
                const Tensor64& b = inval(1);
                Broadcast bc = classify_broadcast(a, b);
                if (want(0)) accum(gslot(0), g);
                if (want(1)) {
                    Tensor64& db = gslot(1);
                    ensure_zero(db, b);
                    switch (bc) {
                        case Broadcast::kNone:
                            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                            break;
                        case Broadcast::kScalar:
                            for (std::size_t i = 0; i < g.size(); ++i) db[0] += g[i];
                            break;
                        case Broadcast::kRowVector: {
                            std::size_t m = a.rows(), w = a.cols();
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < w; ++j) db[j] += g[i * w + j];
                            break;
                        }
                        case Broadcast::kColVector: {
                            std::size_t m = a.rows(), w = a.cols();
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < w; ++j) db[i] += g[i * w + j];
                            break;
                        }
                    }
                }
                break;
            }
            case OpKind::kScale:
                if (want(0)) accum(gslot(0), scale(g, n.scalar));
                break;
            case OpKind::kSwish:
                if (want(0)) {
                    const Tensor64& x = inval(0);
                    Tensor64 dx(x.shape());
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        double s = sigmoid_scalar(x[i]);
                        dx[i] = g[i] * (s + x[i] * s * (1.0 - s));
                    }
                    accum(gslot(0), dx);
                }
                break;
            case OpKind::kGelu:
                if (want(0)) {
                    const Tensor64& x = inval(0);
                    const double c = 0.7978845608028653558798921198687637;
                    Tensor64 dx(x.shape());
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        double u = c * (x[i] + 0.044715 * x[i] * x[i] * x[i]);
                        double t = std::tanh(u);
                        double du = c * (1.0 + 3.0 * 0.044715 * x[i] * x[i]);
                        dx[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * (1.0 - t * t) * du);
                    }
                    accum(gslot(0), dx);
                }
                break;
            case OpKind::kGroupNorm: {
                Tensor64 dx = zeros_like(inval(0));
                Tensor64 dscale = zeros_like(inval(1));
                Tensor64 dshift = zeros_like(inval(2));
                backward_group_norm(n, nodes, g, dx, dscale, dshift);
                if (want(0)) accum(gslot(0), dx);
                if (want(1)) accum(gslot(1), dscale);
                if (want(2)) accum(gslot(2), dshift);
                break;
            }
            case OpKind::kSoftmaxRows:
                if (want(0)) {
                    const Tensor64& y = n.value;
                    std::size_t rows = y.rows(), w = y.cols();
                    Tensor64 dx(y.shape());
                    for (std::size_t i = 0; i < rows; ++i) {
                        const double* yi = y.data() + i * w;
                        const double* gi = g.data() + i * w;
                        double dotgy = 0;
                        for (std::size_t j = 0; j < w; ++j) dotgy += gi[j] * yi[j];
                        double* di = dx.data() + i * w;
                        for (std::size_t j = 0; j < w; ++j) di[j] = yi[j] * (gi[j] - dotgy);
                    }
                    accum(gslot(0), dx);
                }
                break;
            case OpKind::kSum:
                if (want(0)) {
                    Tensor64 dx(inval(0).shape());
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[0];
                    accum(gslot(0), dx);
                }
                break;
            case OpKind::kGatherRows:
                if (want(0)) {
                    Tensor64& dt = gslot(0);
                    ensure_zero(dt, inval(0));
                    std::size_t d = inval(0).cols();
                    const auto& ids = *n.ids;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                        double* drow = dt.row(static_cast<std::size_t>(ids[i]));
                        const double* gi = g.row(i);
                        for (std::size_t c = 0; c < d; ++c) drow[c] += gi[c];
                    }
                }
                break;
            case OpKind::kConcatCols: {
                std::size_t off = 0;
                for (std::size_t s = 0; s < n.inputs.size(); ++s) {
                    const Tensor64& part = inval(s);
                    std::size_t w = part.cols();
                    if (want(s)) {
                        Tensor64 dp({part.rows(), w});
                        for (std::size_t i = 0; i < part.rows(); ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                dp.at(i, j) = g.at(i, off + j);
                        accum(gslot(s), dp);
                    }
                    off += w;
                }
                break;
            }
            case OpKind::kConcatRows: {
                std::size_t off = 0;
                for (std::size_t s2 = 0; s2 < n.inputs.size(); ++s2) {
                    const Tensor64& part = inval(s2);
                    if (want(s2)) {
                        Tensor64 dp({part.rows(), part.cols()});
                        std::copy(g.row(off), g.row(off) + part.size(), dp.data());
                        accum(gslot(s2), dp);
                    }
                    off += part.rows();
                }
                break;
            }
            case OpKind::kSliceRows:
                if (want(0)) {
                    const Tensor64& x = inval(0);
                    Tensor64& dx = gslot(0);
                    ensure_zero(dx, x);
                    std::size_t w = x.cols();
                    for (std::size_t i = n.a; i < n.b; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            dx[i * w + j] += g.at(i - n.a, j);
                }
                break;
            case OpKind::kSliceCols:
                if (want(0)) {
                    const Tensor64& x = inval(0);
                    Tensor64& dx = gslot(0);
                    ensure_zero(dx, x);
                    if (x.rank() == 1) {
                        for (std::size_t j = n.a; j < n.b; ++j) dx[j] += g[j - n.a];
                    } else {
                        std::size_t w = x.cols();
                        for (std::size_t i = 0; i < x.rows(); ++i)
                            for (std::size_t j = n.a; j < n.b; ++j)
                                dx[i * w + j] += g.at(i, j - n.a);
                    }
                }
                break;
            case OpKind::kCrossEntropy:
                if (want(0)) {
                    const Tensor64& logits = inval(0);
                    const auto& targets = *n.ids;
                    const auto& mask = *n.mask;
                    std::size_t rows = logits.rows(), vsz = logits.cols();
                    std::size_t m = 0;
                    for (auto b : mask) m += b ? 1 : 0;
                    double w = g[0] / static_cast<double>(m);
                    Tensor64 dl = zeros_like(logits);
                    for (std::size_t i = 0; i < rows; ++i) {
                        if (!mask[i]) continue;
                        const double* row = logits.row(i);
                        double mx = row[0];
                        for (std::size_t j = 1; j < vsz; ++j) mx = std::max(mx, row[j]);
                        double s = 0;
                        for (std::size_t j = 0; j < vsz; ++j) s += std::exp(row[j] - mx);
                        double inv = 1.0 / s;
                        double* di = dl.row(i);
                        for (std::size_t j = 0; j < vsz; ++j)
                            di[j] = w * std::exp(row[j] - mx) * inv;
                        di[static_cast<std::size_t>(targets[i])] -= w;
                    }
                    accum(gslot(0), dl);
                }
                break;
            case OpKind::kRetention: {
                Tensor64 dq = zeros_like(inval(0));
                Tensor64 dk = zeros_like(inval(1));
                Tensor64 dv = zeros_like(inval(2));
                bool gamma_grad = n.inputs.size() >= 4 && want(3);
                double dgamma = 0.0;
                backward_retention(n, nodes, g, dq, dk, dv, gamma_grad ? &dgamma : nullptr);
                if (want(0)) accum(gslot(0), dq);
                if (want(1)) accum(gslot(1), dk);
                if (want(2)) accum(gslot(2), dv);
                if (gamma_grad) accum(gslot(3), Tensor64::scalar(dgamma));
                break;
            }
            case OpKind::kRetentionSeq: {
                const Tensor64& q = inval(0);
                const Tensor64& k = inval(1);
                const Tensor64& v = inval(2);
                double gamma = gamma_of(n, nodes);
                std::size_t d = q.cols(), blocks = q.rows() / n.c;
                double qk_scale = n.flag ? 1.0 / std::sqrt(double(d)) : 1.0;
                Tensor64 dq = zeros_like(q), dk = zeros_like(k), dv = zeros_like(v);
                bool gamma_grad = n.inputs.size() >= 4 && want(3);
                double dgamma = 0.0;
                RetSeqWork work(n.c, d, gamma, n.flag);
                if (!n.stash || n.stash->size() != blocks * n.c * n.c)
                    throw ContractError("retention_seq: forward scores missing");
                for (std::size_t b = 0; b < blocks; ++b) {
                    std::size_t off = b * n.c * d;
                    ret_seq_backward_block(q.data() + off, k.data() + off, v.data() + off,
                                           g.data() + off, n.stash->data() + b * n.c * n.c,
                                           dq.data() + off, dk.data() + off, dv.data() + off,
                                           qk_scale, work, gamma, n.flag,
                                           gamma_grad ? &dgamma : nullptr);
                }
                if (want(0)) accum(gslot(0), dq);
                if (want(1)) accum(gslot(1), dk);
                if (want(2)) accum(gslot(2), dv);
                if (gamma_grad) accum(gslot(3), Tensor64::scalar(dgamma));
                break;
            }
            case OpKind::kXPos: {
                Tensor64 dx = zeros_like(inval(0));
                bool theta_grad = want(1);
                Tensor64 dtheta = zeros_like(inval(1));
                backward_xpos(n, nodes, g, dx, theta_grad ? &dtheta : nullptr);
                if (want(0)) accum(gslot(0), dx);
                if (theta_grad) accum(gslot(1), dtheta);
                break;
            }
        }
    }

    // leaves the loss never reached still report a (zero) gradient
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].kind == OpKind::kLeaf && nodes[i].requires_grad && grads[i].empty())
            grads[i] = zeros_like(nodes[i].value);
    return grads;
}

double finite_diff_check(const std::function<double(const std::vector<Tensor64>&)>& f,
                         const std::vector<Tensor64>& params,
                         const std::vector<Tensor64>& analytic_grads, double step) {
    if (step <= 0) throw ParameterError("finite_diff_check: step must be positive");
    if (params.size() != analytic_grads.size())
        throw ContractError("finite_diff_check: one gradient per parameter tensor required");
    std::vector<Tensor64> work = params;
    double max_rel = 0.0;
    for (std::size_t t = 0; t < work.size(); ++t) {
        if (!params[t].same_shape(analytic_grads[t]))
            throw ContractError("finite_diff_check: gradient shape mismatch");
        for (std::size_t i = 0; i < work[t].size(); ++i) {
            double orig = work[t][i];
            work[t][i] = orig + step;
            double fp = f(work);
            work[t][i] = orig - step;
            double fm = f(work);
            work[t][i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("finite_diff_check: non-finite function value");
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = analytic_grads[t][i];
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace retnet
