// SPDX-License-Identifier: Apache-2.0
#include "retnet/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "retnet/attention.hpp"
#include "retnet/autodiff.hpp"
#include "retnet/checkpoint.hpp"
#include "retnet/model.hpp"
#include "retnet/model_tape.hpp"
#include "retnet/prng.hpp"
#include "retnet/training.hpp"

namespace retnet {

namespace {

Tensor64 rand_tensor(Prng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
    Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor64& a, const Tensor64& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool bits_equal(const Tensor64& a, const Tensor64& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

CheckResult made(const std::string& name, bool pass, const std::string& detail) {
    return {name, pass, detail};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// gradcheck plumbing: a case builds its loss from leaf tensors created in
// order at ids 0..k-1; finite differences then replay the same construction.

struct PrimCase {
    std::string name;
    std::vector<Tensor64> inputs;
    std::function<int(Tape&, const std::vector<Tensor64>&)> build;
};

double prim_fd_error(const PrimCase& c, double step = 1e-5) {
    Tape tape;
    int loss = c.build(tape, c.inputs);
    auto grads = backward(tape, loss);
    std::vector<Tensor64> analytic;
    for (std::size_t i = 0; i < c.inputs.size(); ++i)
        analytic.push_back(grads[i].empty() ? Tensor64(c.inputs[i].shape()) : grads[i]);
    auto f = [&](const std::vector<Tensor64>& vals) {
        Tape t;
        return t.value(c.build(t, vals))[0];
    };
    return finite_diff_check(f, c.inputs, analytic, step);
}

// loss = sum(out * W) with a fixed random W, so the upstream gradient that
// reaches the op under test is non-uniform
int weighted_sum_loss(Tape& tape, int out, const Tensor64& w) {
    int wleaf = tape.leaf(w, false);
    return tape.sum(tape.hadamard(out, wleaf));
}

} // namespace

// ---------------------------------------------------------------------------
// numerics

CheckResult check_matmul_oracle(std::uint64_t seed) {
    Prng rng(seed);
    double worst = 0;
    for (std::size_t m = 1; m <= 8; ++m)
        for (std::size_t k = 1; k <= 8; ++k)
            for (std::size_t n = 1; n <= 8; ++n) {
                Tensor64 a = rand_tensor(rng, {m, k}, -2, 2);
                Tensor64 b = rand_tensor(rng, {k, n}, -2, 2);
                Tensor64 c = matmul(a, b);
                // independent oracle: naive dot per output element
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0;
                        for (std::size_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
                        double rel = std::abs(c.at(i, j) - acc) / std::max(1.0, std::abs(acc));
                        worst = std::max(worst, rel);
                    }
            }
    // identity and 1x1 golden cases
    Tensor64 b = rand_tensor(rng, {3, 3});
    Tensor64 eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    bool id_ok = max_abs_diff(matmul(eye, b), b) == 0.0;
    bool one_ok = matmul(Tensor64::matrix({{2.0}}), Tensor64::matrix({{3.0}}))[0] == 6.0;
    bool mismatch_ok = false;
    try {
        matmul(Tensor64({2, 3}), Tensor64({2, 3}));
    } catch (const DimensionError&) {
        mismatch_ok = true;
    }
    bool pass = worst <= 1e-12 && id_ok && one_ok && mismatch_ok;
    return made("numerics.matmul_oracle", pass, "max rel err " + fmt(worst));
}

CheckResult check_groupnorm_stats(std::uint64_t seed) {
    Prng rng(seed);
    double worst_mean = 0, worst_var = 0;
    // eps well below any plausible group variance, so the normalized
    // variance lands within 1e-6 of 1 rather than at var/(var + eps)
    for (std::size_t groups : {1ul, 2ul, 4ul, 8ul}) {
        std::size_t d = 32;
        Tensor64 x = rand_tensor(rng, {16, d}, -2, 2);
        Tensor64 ones({d}), zeros({d});
        for (std::size_t i = 0; i < d; ++i) ones[i] = 1.0;
        Tensor64 y = group_norm(x, groups, 1e-12, ones, zeros);
        std::size_t g = d / groups;
        for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t grp = 0; grp < groups; ++grp) {
                double mean = 0, var = 0;
                for (std::size_t j = 0; j < g; ++j) mean += y.at(r, grp * g + j);
                mean /= double(g);
                for (std::size_t j = 0; j < g; ++j) {
                    double dv = y.at(r, grp * g + j) - mean;
                    var += dv * dv;
                }
                var /= double(g);
                worst_mean = std::max(worst_mean, std::abs(mean));
                worst_var = std::max(worst_var, std::abs(var - 1.0));
            }
    }
    // golden cases
    Tensor64 ones2({2}), zeros2({2});
    ones2[0] = ones2[1] = 1.0;
    Tensor64 constant = Tensor64::matrix({{3.0, 3.0}});
    bool const_ok = max_abs_diff(group_norm(constant, 1, 1e-6, ones2, zeros2),
                                 Tensor64({1, 2})) < 1e-9;
    Tensor64 pm = Tensor64::matrix({{1.0, -1.0}});
    bool pm_ok = max_abs_diff(group_norm(pm, 1, 0.0, ones2, zeros2), pm) < 1e-12;
    bool indivisible_ok = false;
    try {
        group_norm(Tensor64({2, 6}), 4, 1e-6, Tensor64({6}), Tensor64({6}));
    } catch (const DimensionError&) {
        indivisible_ok = true;
    }
    bool pass = worst_mean <= 1e-10 && worst_var <= 1e-6 && const_ok && pm_ok && indivisible_ok;
    return made("numerics.groupnorm_stats", pass,
                "max |mean| " + fmt(worst_mean) + ", max |var-1| " + fmt(worst_var));
}

CheckResult check_softmax_invariants(std::uint64_t seed) {
    Prng rng(seed);
    Tensor64 x = rand_tensor(rng, {8, 12}, -5, 5);
    Tensor64 y = softmax_rows(x);
    double worst_sum = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < y.cols(); ++j) s += y.at(i, j);
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    Tensor64 shifted = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) shifted.at(i, j) += 3.25;
    double shift_diff = max_abs_diff(softmax_rows(shifted), y);
    Tensor64 sym = softmax_rows(Tensor64::matrix({{0.0, 0.0}}));
    Tensor64 lg = softmax_rows(Tensor64::matrix({{std::log(1.0), std::log(3.0)}}));
    bool golden_ok = std::abs(sym[0] - 0.5) < 1e-15 && std::abs(sym[1] - 0.5) < 1e-15 &&
                     std::abs(lg[0] - 0.25) < 1e-12 && std::abs(lg[1] - 0.75) < 1e-12;
    bool pass = worst_sum <= 1e-12 && shift_diff <= 1e-12 && golden_ok;
    return made("numerics.softmax_rows", pass,
                "max |row sum - 1| " + fmt(worst_sum) + ", shift diff " + fmt(shift_diff));
}

CheckResult check_activation_monotonicity() {
    bool ok = true;
    double prev_s = 0, prev_g = 0;
    for (double x = 0; x <= 8.0; x += 0.005) {
        double s = x * sigmoid_scalar(x);
        double g = gelu_scalar(x);
        if (x > 0 && (s < prev_s || g < prev_g)) ok = false;
        prev_s = s;
        prev_g = g;
    }
    double sw1 = swish(Tensor64::scalar(1.0))[0];
    double ge1 = gelu(Tensor64::scalar(1.0))[0];
    ok = ok && std::abs(sw1 - 0.7310585786300049) < 1e-12;
    ok = ok && std::abs(ge1 - 0.8411919906082768) < 1e-12;
    ok = ok && swish(Tensor64::scalar(0.0))[0] == 0.0 && gelu(Tensor64::scalar(0.0))[0] == 0.0;
    ok = ok && std::abs(gelu(Tensor64::scalar(10.0))[0] - 10.0) < 1e-9;
    // swish(x) - swish(-x) == x
    for (double x = -6; x <= 6.0; x += 0.37) {
        double lhs = x * sigmoid_scalar(x) - (-x * sigmoid_scalar(-x));
        if (std::abs(lhs - x) > 1e-12) ok = false;
    }
    return made("numerics.activations", ok, "swish/gelu goldens and monotonicity");
}

// ---------------------------------------------------------------------------
// autodiff

CheckResult check_tape_basics(std::uint64_t seed) {
    Prng rng(seed);
    bool ok = true;
    std::string why;

    {
        Tape tape;
        Tensor64 eye({2, 2});
        eye.at(0, 0) = eye.at(1, 1) = 1.0;
        Tensor64 b = rand_tensor(rng, {2, 2});
        int r = tape.matmul(tape.leaf(eye), tape.leaf(b));
        if (!bits_equal(tape.value(r), b)) { ok = false; why = "matmul identity value"; }
        std::size_t before = tape.size();
        int x = tape.scale(r, 2.0);
        x = tape.swish(x);
        tape.sum(x);
        if (tape.size() != before + 3) { ok = false; why = "3-op chain length"; }
    }
    {
        // replay is bit-identical on a small model tape
        ModelConfig cfg;
        cfg.layers = 1;
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.vocab_size = 6;
        cfg.chunk_len = 2;
        cfg.seed = seed;
        auto params = init_params<double>(cfg);
        Tape tape;
        auto bound = bind_params(tape, params, cfg);
        model_logits_tape(tape, bound, {1, 4, 2, 3});
        if (!tape.replay_matches()) { ok = false; why = "replay not bit-identical"; }
    }
    {
        // sum(x): ones; sum(x*x): 2x
        Tape tape;
        Tensor64 x = rand_tensor(rng, {3, 4});
        int xl = tape.leaf(x, true);
        auto grads = backward(tape, tape.sum(xl));
        for (std::size_t i = 0; i < x.size(); ++i)
            if (grads[0][i] != 1.0) { ok = false; why = "sum grad"; }
        Tape tape2;
        int x2 = tape2.leaf(x, true);
        auto g2 = backward(tape2, tape2.sum(tape2.hadamard(x2, x2)));
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(g2[0][i] - 2.0 * x[i]) > 1e-12) { ok = false; why = "x*x grad"; }
    }
    {
        // gradient linearity and unreachable-leaf zeros
        Tensor64 x = rand_tensor(rng, {4});
        Tensor64 w1 = rand_tensor(rng, {4});
        Tensor64 w2 = rand_tensor(rng, {4});
        auto single = [&](const Tensor64& w) {
            Tape t;
            int xl = t.leaf(x, true);
            int loss = t.sum(t.hadamard(xl, t.leaf(w)));
            return backward(t, loss)[0];
        };
        Tensor64 ga = single(w1), gb = single(w2);
        Tape t;
        int xl = t.leaf(x, true);
        int unreachable = t.leaf(rand_tensor(rng, {2}), true);
        int loss = t.add(t.sum(t.hadamard(xl, t.leaf(w1))), t.sum(t.hadamard(xl, t.leaf(w2))));
        auto g = backward(t, loss);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(g[0][i] - (ga[i] + gb[i])) > 1e-12) { ok = false; why = "linearity"; }
        if (g[static_cast<std::size_t>(unreachable)].empty() ||
            g[static_cast<std::size_t>(unreachable)][0] != 0.0 ||
            g[static_cast<std::size_t>(unreachable)][1] != 0.0) {
            ok = false;
            why = "unreachable leaf gradient";
        }
    }
    {
        // non-scalar loss rejected
        Tape t;
        int xl = t.leaf(rand_tensor(rng, {2, 2}), true);
        bool threw = false;
        try {
            backward(t, xl);
        } catch (const ContractError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "non-scalar loss accepted"; }
    }
    return made("autodiff.tape_basics", ok, ok ? "replay, linearity, zero grads" : why);
}

CheckResult check_primitive_gradients(std::uint64_t seed) {
    Prng rng(seed);
    std::vector<PrimCase> cases;
    auto W = [&](std::vector<std::size_t> shape) { return rand_tensor(rng, shape, -1, 1); };

    {
        Tensor64 w = W({3, 2});
        cases.push_back({"matmul",
                         {rand_tensor(rng, {3, 4}), rand_tensor(rng, {4, 2})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int a = t.leaf(v[0], true), b = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.matmul(a, b), w);
                         }});
    }
    {
        Tensor64 w = W({3, 5});
        cases.push_back({"matmul_bt",
                         {rand_tensor(rng, {3, 4}), rand_tensor(rng, {5, 4})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int a = t.leaf(v[0], true), b = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.matmul_bt(a, b), w);
                         }});
    }
    for (auto [name, bshape] : std::vector<std::pair<std::string, std::vector<std::size_t>>>{
             {"hadamard_same", {3, 4}},
             {"hadamard_scalar", {1}},
             {"hadamard_row", {1, 4}},
             {"hadamard_col", {3, 1}}}) {
        Tensor64 w = W({3, 4});
        cases.push_back({name,
                         {rand_tensor(rng, {3, 4}), rand_tensor(rng, bshape)},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int a = t.leaf(v[0], true), b = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.hadamard(a, b), w);
                         }});
    }
    for (auto [name, bshape] : std::vector<std::pair<std::string, std::vector<std::size_t>>>{
             {"add_same", {3, 4}}, {"add_row", {1, 4}}, {"add_col", {3, 1}}}) {
        Tensor64 w = W({3, 4});
        cases.push_back({name,
                         {rand_tensor(rng, {3, 4}), rand_tensor(rng, bshape)},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int a = t.leaf(v[0], true), b = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.add(a, b), w);
                         }});
    }
    {
        Tensor64 w = W({3, 3});
        cases.push_back({"scale",
                         {rand_tensor(rng, {3, 3})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.scale(t.leaf(v[0], true), -1.7), w);
                         }});
        cases.push_back({"swish",
                         {rand_tensor(rng, {3, 3}, -3, 3)},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.swish(t.leaf(v[0], true)), w);
                         }});
        cases.push_back({"gelu",
                         {rand_tensor(rng, {3, 3}, -3, 3)},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.gelu(t.leaf(v[0], true)), w);
                         }});
    }
    {
        // stagger the inputs so every normalization group has healthy
        // variance; tiny-variance groups make central differences blow up
        auto spread = [&](std::size_t rows, std::size_t cols, std::size_t gsz) {
            Tensor64 x = rand_tensor(rng, {rows, cols}, -1, 1);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    x.at(i, j) += 2.0 * static_cast<double>(j % gsz) -
                                  static_cast<double>(gsz - 1);
            return x;
        };
        Tensor64 w = W({4, 6});
        cases.push_back({"group_norm",
                         {spread(4, 6, 3), rand_tensor(rng, {6}, 0.5, 1.5),
                          rand_tensor(rng, {6})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int x = t.leaf(v[0], true);
                             int s = t.leaf(v[1], true);
                             int b = t.leaf(v[2], true);
                             return weighted_sum_loss(t, t.group_norm(x, s, b, 2, 1e-6), w);
                         }});
        cases.push_back({"layer_norm",
                         {spread(4, 6, 6), rand_tensor(rng, {6}, 0.5, 1.5),
                          rand_tensor(rng, {6})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             int x = t.leaf(v[0], true);
                             int s = t.leaf(v[1], true);
                             int b = t.leaf(v[2], true);
                             return weighted_sum_loss(t, t.layer_norm(x, s, b, 1e-6), w);
                         }});
    }
    {
        Tensor64 w = W({3, 5});
        cases.push_back({"softmax_rows",
                         {rand_tensor(rng, {3, 5}, -2, 2)},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.softmax_rows(t.leaf(v[0], true)), w);
                         }});
    }
    {
        Tensor64 w = W({4, 3});
        std::vector<int> ids{0, 2, 2, 5};
        cases.push_back({"gather_rows",
                         {rand_tensor(rng, {6, 3})},
                         [w, ids](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.gather_rows(t.leaf(v[0], true), ids),
                                                      w);
                         }});
    }
    {
        Tensor64 w = W({3, 7});
        cases.push_back({"concat_cols",
                         {rand_tensor(rng, {3, 2}), rand_tensor(rng, {3, 4}),
                          rand_tensor(rng, {3, 1})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             std::vector<int> parts{t.leaf(v[0], true), t.leaf(v[1], true),
                                                    t.leaf(v[2], true)};
                             return weighted_sum_loss(t, t.concat_cols(parts), w);
                         }});
        Tensor64 w2 = W({3, 3});
        cases.push_back({"slice_cols",
                         {rand_tensor(rng, {3, 6})},
                         [w2](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.slice_cols(t.leaf(v[0], true), 1, 4),
                                                      w2);
                         }});
    }
    {
        Tensor64 w = W({3, 4});
        cases.push_back({"slice_rows",
                         {rand_tensor(rng, {5, 4})},
                         [w](Tape& t, const std::vector<Tensor64>& v) {
                             return weighted_sum_loss(t, t.slice_rows(t.leaf(v[0], true), 1, 4),
                                                      w);
                         }});
        Tensor64 w2 = W({6, 3});
        cases.push_back({"concat_rows",
                         {rand_tensor(rng, {2, 3}), rand_tensor(rng, {1, 3}),
                          rand_tensor(rng, {3, 3})},
                         [w2](Tape& t, const std::vector<Tensor64>& v) {
                             std::vector<int> parts{t.leaf(v[0], true), t.leaf(v[1], true),
                                                    t.leaf(v[2], true)};
                             return weighted_sum_loss(t, t.concat_rows(parts), w2);
                         }});
        Tensor64 w3 = W({6, 4});
        cases.push_back({"xpos_cyclic",
                         {rand_tensor(rng, {6, 4}), rand_tensor(rng, {2}, 0.05, 1.0)},
                         [w3](Tape& t, const std::vector<Tensor64>& v) {
                             int x = t.leaf(v[0], true);
                             int th = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.xpos(x, th, 1, false, 3), w3);
                         }});
    }
    for (bool stab : {false, true}) {
        // two sequences of four rows stacked
        Tensor64 w = W({8, 3});
        std::string name = stab ? "retention_seq_stabilized" : "retention_seq";
        cases.push_back({name,
                         {rand_tensor(rng, {8, 3}), rand_tensor(rng, {8, 3}),
                          rand_tensor(rng, {8, 3}), Tensor64::scalar(0.91)},
                         [w, stab](Tape& t, const std::vector<Tensor64>& v) {
                             int q = t.leaf(v[0], true), k = t.leaf(v[1], true),
                                 vv = t.leaf(v[2], true);
                             int g = t.leaf(v[3], true);
                             return weighted_sum_loss(
                                 t, t.retention_seq(q, k, vv, g, stab, 4), w);
                         }});
    }
    {
        std::vector<int> targets{3, 0, 6, 2};
        std::vector<std::uint8_t> mask{1, 0, 1, 1};
        cases.push_back({"cross_entropy",
                         {rand_tensor(rng, {4, 7}, -2, 2)},
                         [targets, mask](Tape& t, const std::vector<Tensor64>& v) {
                             return t.cross_entropy(t.leaf(v[0], true), targets, mask);
                         }});
    }
    for (bool stab : {false, true}) {
        Tensor64 w = W({5, 4});
        std::string name = stab ? "retention_stabilized" : "retention";
        cases.push_back({name,
                         {rand_tensor(rng, {5, 4}), rand_tensor(rng, {5, 4}),
                          rand_tensor(rng, {5, 4})},
                         [w, stab](Tape& t, const std::vector<Tensor64>& v) {
                             int q = t.leaf(v[0], true), k = t.leaf(v[1], true),
                                 vv = t.leaf(v[2], true);
                             return weighted_sum_loss(t, t.retention(q, k, vv, 0.9, stab), w);
                         }});
        cases.push_back({name + "_gamma",
                         {rand_tensor(rng, {5, 4}), rand_tensor(rng, {5, 4}),
                          rand_tensor(rng, {5, 4}), Tensor64::scalar(0.92)},
                         [w, stab](Tape& t, const std::vector<Tensor64>& v) {
                             int q = t.leaf(v[0], true), k = t.leaf(v[1], true),
                                 vv = t.leaf(v[2], true);
                             int g = t.leaf(v[3], true);
                             return weighted_sum_loss(t, t.retention(q, k, vv, g, stab), w);
                         }});
    }
    for (bool conj : {false, true}) {
        Tensor64 w = W({4, 6});
        cases.push_back({conj ? "xpos_conj" : "xpos",
                         {rand_tensor(rng, {4, 6}), rand_tensor(rng, {3}, 0.05, 1.0)},
                         [w, conj](Tape& t, const std::vector<Tensor64>& v) {
                             int x = t.leaf(v[0], true);
                             int th = t.leaf(v[1], true);
                             return weighted_sum_loss(t, t.xpos(x, th, 2, conj), w);
                         }});
    }

    double worst = 0;
    std::string worst_name;
    for (const auto& c : cases) {
        double err = prim_fd_error(c);
        if (err > worst) {
            worst = err;
            worst_name = c.name;
        }
    }
    bool pass = worst <= 1e-6;
    return made("autodiff.primitive_gradients", pass,
                "worst " + fmt(worst) + " (" + worst_name + "), " +
                    std::to_string(cases.size()) + " cases");
}

namespace {

double model_gradcheck_error(ModelConfig cfg, std::uint64_t seed, std::size_t* count_out) {
    cfg.validate();
    auto params = init_params<double>(cfg);
    if (count_out) *count_out = param_count(params);
    Prng rng(seed);
    std::size_t n = 6;
    std::vector<int> tokens(n), targets(n);
    std::vector<std::uint8_t> mask(n, 1);
    for (auto& t : tokens) t = static_cast<int>(rng.below(cfg.vocab_size));
    for (auto& t : targets) t = static_cast<int>(rng.below(cfg.vocab_size));

    // names of tensors that participate in the gradient
    auto trainable = [&](const std::string& name) {
        if (name.size() >= 6 && name.substr(name.size() - 6) == "gammas")
            return cfg.trainable_gamma;
        if (name.size() >= 5 && name.substr(name.size() - 5) == "theta")
            return cfg.trainable_theta;
        return true;
    };

    Tape tape;
    auto bound = bind_params(tape, params, cfg);
    int loss = tape.cross_entropy(model_logits_tape(tape, bound, tokens), targets, mask);
    auto node_grads = backward(tape, loss);
    auto all_grads = collect_param_grads(tape, bound, node_grads);

    std::vector<Tensor64> fd_params, fd_grads;
    std::vector<std::string> names;
    std::size_t idx = 0;
    visit_params(params, [&](const std::string& name, const Tensor64& t) {
        if (trainable(name)) {
            fd_params.push_back(t);
            fd_grads.push_back(all_grads[idx]);
            names.push_back(name);
        }
        ++idx;
    });

    auto f = [&](const std::vector<Tensor64>& vals) {
        ModelParams64 p2 = params;
        std::size_t vi = 0, pi = 0;
        visit_params(p2, [&](const std::string& name, Tensor64& t) {
            if (trainable(name)) t = vals[vi++];
            (void)pi;
        });
        Tape t2;
        auto b2 = bind_params(t2, p2, cfg);
        return t2.value(t2.cross_entropy(model_logits_tape(t2, b2, tokens), targets, mask))[0];
    };
    return finite_diff_check(f, fd_params, fd_grads, 1e-5);
}

} // namespace

CheckResult check_model_gradient(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.vocab_size = 11;
    cfg.chunk_len = 4;
    cfg.max_positions = 64;
    cfg.seed = seed ^ 0x51;

    std::size_t count = 0;
    double err_frozen = model_gradcheck_error(cfg, seed, &count);

    ModelConfig cfg2 = cfg;
    cfg2.stabilized = true;
    cfg2.trainable_theta = true;
    cfg2.trainable_gamma = true;
    double err_full = model_gradcheck_error(cfg2, seed + 1, nullptr);

    bool pass = count <= 5000 && err_frozen <= 1e-4 && err_full <= 1e-4;
    return made("autodiff.model_gradient", pass,
                std::to_string(count) + " params, max rel err " + fmt(err_frozen) +
                    " (frozen), " + fmt(err_full) + " (trainable theta/gamma, stabilized)");
}

// ---------------------------------------------------------------------------
// retention

CheckResult check_decay_mask_properties() {
    bool ok = true;
    std::string why;
    auto m = decay_mask<double>(3, 0.5);
    double expected[3][3] = {{1, 0, 0}, {0.5, 1, 0}, {0.25, 0.5, 1}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (m.entries.at(i, j) != expected[i][j]) { ok = false; why = "golden 3x3"; }
    if (decay_mask<double>(1, 0.3).entries[0] != 1.0) { ok = false; why = "single token"; }
    auto ones = decay_mask<double>(4, 1.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            if (ones.entries.at(i, j) != (j <= i ? 1.0 : 0.0)) { ok = false; why = "gamma=1"; }
    auto d = decay_mask<double>(20, 0.9);
    for (std::size_t n = 0; n < 20 && ok; ++n)
        for (std::size_t mm = 0; mm <= n && ok; ++mm) {
            if (n < mm && d.entries.at(n, mm) != 0.0) { ok = false; why = "causal support"; }
            if (n == mm && d.entries.at(n, mm) != 1.0) { ok = false; why = "unit diagonal"; }
            for (std::size_t l = 0; l <= mm; ++l) {
                double lhs = d.entries.at(n, mm) * d.entries.at(mm, l);
                if (std::abs(lhs - d.entries.at(n, l)) > 1e-12) {
                    ok = false;
                    why = "multiplicativity";
                }
            }
        }
    for (double bad : {0.0, -0.5, 1.5}) {
        try {
            decay_mask<double>(3, bad);
            ok = false;
            why = "gamma range";
        } catch (const ParameterError&) {
        }
    }
    return made("retention.decay_mask", ok, ok ? "goldens and multiplicativity" : why);
}

CheckResult check_xpos_identities(std::uint64_t seed) {
    Prng rng(seed);
    auto xp = make_xpos<double>(8);
    Tensor64 q = rand_tensor(rng, {1, 8});
    Tensor64 k = rand_tensor(rng, {1, 8});
    double worst_norm = 0, worst_rel = 0, worst_round = 0;
    // pair norms
    Tensor64 x = rand_tensor(rng, {6, 8});
    Tensor64 rx = xpos_apply(x, xp, 3, false);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double n0 = std::hypot(x.at(i, 2 * j), x.at(i, 2 * j + 1));
            double n1 = std::hypot(rx.at(i, 2 * j), rx.at(i, 2 * j + 1));
            worst_norm = std::max(worst_norm, std::abs(n0 - n1));
        }
    // conjugate inverts
    Tensor64 round = xpos_apply(xpos_apply(x, xp, 5, false), xp, 5, true);
    worst_round = max_abs_diff(round, x);
    // the q/k modulation composes to a pure relative-offset rotation:
    // <rot(q, n), rot(k, m)> == <q, rot_conj(k, n - m)>
    for (std::size_t n = 0; n < 7; ++n)
        for (std::size_t m = 0; m <= n; ++m) {
            Tensor64 qn = xpos_apply(q, xp, n, false);
            Tensor64 km = xpos_apply(k, xp, m, false);
            double lhs = 0;
            for (std::size_t c = 0; c < 8; ++c) lhs += qn[c] * km[c];
            Tensor64 krel = xpos_apply(k, xp, n - m, true);
            double rhs = 0;
            for (std::size_t c = 0; c < 8; ++c) rhs += q[c] * krel[c];
            worst_rel = std::max(worst_rel, std::abs(lhs - rhs));
        }
    // zero angles are the identity
    XPos<double> zero = xp;
    for (std::size_t j = 0; j < zero.theta.size(); ++j) zero.theta[j] = 0.0;
    bool zero_ok = bits_equal(xpos_apply(x, zero, 9, false), x);
    bool odd_ok = false;
    try {
        xpos_apply(Tensor64({2, 8}), make_xpos<double>(6), 0, false);
    } catch (const DimensionError&) {
        odd_ok = true;
    }
    bool pass = worst_norm <= 1e-12 && worst_rel <= 1e-12 && worst_round <= 1e-12 && zero_ok &&
                odd_ok;
    return made("retention.xpos_identities", pass,
                "norm " + fmt(worst_norm) + ", relative " + fmt(worst_rel) + ", roundtrip " +
                    fmt(worst_round));
}

CheckResult check_retention_forms(std::uint64_t seed) {
    Prng rng(seed);
    bool ok = true;
    std::string why;

    // worked one-dimensional example
    {
        Tensor64 q = Tensor64::matrix({{1.0}, {1.0}});
        Tensor64 v = Tensor64::matrix({{2.0}, {3.0}});
        Tensor64 out = retention_parallel(q, q, v, 0.5);
        if (std::abs(out[0] - 2.0) > 1e-12 || std::abs(out[1] - 4.0) > 1e-12) {
            ok = false;
            why = "worked example (parallel)";
        }
        RetentionState<double> st(1);
        Tensor64 o1 = retention_recurrent_step(st, Tensor64::vector({1.0}),
                                               Tensor64::vector({1.0}),
                                               Tensor64::vector({2.0}), 0.5);
        if (std::abs(st.s[0] - 2.0) > 1e-12 || std::abs(o1[0] - 2.0) > 1e-12) {
            ok = false;
            why = "worked example step 1";
        }
        Tensor64 o2 = retention_recurrent_step(st, Tensor64::vector({1.0}),
                                               Tensor64::vector({1.0}),
                                               Tensor64::vector({3.0}), 0.5);
        if (std::abs(st.s[0] - 4.0) > 1e-12 || std::abs(o2[0] - 4.0) > 1e-12) {
            ok = false;
            why = "worked example step 2";
        }
        RetentionState<double> cst(1);
        Tensor64 cw = retention_chunkwise(q, q, v, 0.5, 1, cst);
        if (std::abs(cw[0] - 2.0) > 1e-12 || std::abs(cw[1] - 4.0) > 1e-12) {
            ok = false;
            why = "worked example (chunkwise B=1)";
        }
    }
    // single-token and gamma=1 cumulative-sum oracle
    {
        Tensor64 q = rand_tensor(rng, {1, 4}), k = rand_tensor(rng, {1, 4}),
                 v = rand_tensor(rng, {1, 4});
        Tensor64 out = retention_parallel(q, k, v, 0.7);
        double qk = 0;
        for (std::size_t c = 0; c < 4; ++c) qk += q[c] * k[c];
        for (std::size_t c = 0; c < 4; ++c)
            if (std::abs(out[c] - qk * v[c]) > 1e-12) { ok = false; why = "single token"; }

        std::size_t n = 12, d = 4;
        Tensor64 qq = rand_tensor(rng, {n, d}), kk = rand_tensor(rng, {n, d}),
                 vv = rand_tensor(rng, {n, d});
        Tensor64 got = retention_parallel(qq, kk, vv, 1.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0;
                for (std::size_t m = 0; m <= i; ++m) {
                    double w = 0;
                    for (std::size_t cc = 0; cc < d; ++cc) w += qq.at(i, cc) * kk.at(m, cc);
                    acc += w * vv.at(m, c);
                }
                if (std::abs(got.at(i, c) - acc) > 1e-9) { ok = false; why = "cumsum oracle"; }
            }
    }
    // cross-form sweep at the full sizes
    double worst = 0;
    for (double gamma : {0.9, 0.96875, 0.999}) {
        for (bool stab : {false, true}) {
            std::size_t n = 256, d = 64;
            Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
                     v = rand_tensor(rng, {n, d});
            Tensor64 par = retention_parallel(q, k, v, gamma, stab);
            RetentionState<double> rst(d);
            Tensor64 rec({n, d});
            for (std::size_t t = 0; t < n; ++t) {
                Tensor64 qt({d}), kt({d}), vt({d});
                std::copy(q.row(t), q.row(t) + d, qt.data());
                std::copy(k.row(t), k.row(t) + d, kt.data());
                std::copy(v.row(t), v.row(t) + d, vt.data());
                Tensor64 ot = retention_recurrent_step(rst, qt, kt, vt, gamma, stab);
                std::copy(ot.data(), ot.data() + d, rec.row(t));
            }
            worst = std::max(worst, max_abs_diff(par, rec));
            for (std::size_t B : {std::size_t(1), std::size_t(7), std::size_t(16), n}) {
                RetentionState<double> cst(d);
                Tensor64 ch = retention_chunkwise(q, k, v, gamma, B, cst, stab);
                worst = std::max(worst, max_abs_diff(par, ch));
            }
        }
    }
    if (worst > 1e-9) { ok = false; why = "three-form equivalence " + fmt(worst); }
    // geometric state decay under zero input, exact
    {
        std::size_t d = 3;
        RetentionState<double> st(d);
        Prng r2(seed + 9);
        for (int t = 0; t < 4; ++t) {
            Tensor64 qt = rand_tensor(r2, {d}), kt = rand_tensor(r2, {d}),
                     vt = rand_tensor(r2, {d});
            retention_recurrent_step(st, qt, kt, vt, 0.875);
        }
        Tensor64 s4 = st.s;
        Tensor64 zero({d});
        for (int t = 0; t < 5; ++t) retention_recurrent_step(st, zero, zero, zero, 0.875);
        Tensor64 expect = s4;
        for (int t = 0; t < 5; ++t)
            for (std::size_t i = 0; i < expect.size(); ++i) expect[i] *= 0.875;
        if (!bits_equal(st.s, expect)) { ok = false; why = "geometric state decay"; }
    }
    // parameter and shape errors
    {
        bool threw = false;
        try {
            RetentionState<double> st(2);
            retention_chunkwise(Tensor64({2, 2}), Tensor64({2, 2}), Tensor64({2, 2}), 0.9, 0,
                                st);
        } catch (const ParameterError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "B=0 accepted"; }
        threw = false;
        try {
            retention_parallel(Tensor64({2, 2}), Tensor64({2, 2}), Tensor64({2, 2}), 1.5);
        } catch (const ParameterError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "gamma>1 accepted"; }
        threw = false;
        try {
            retention_parallel(Tensor64({2, 2}), Tensor64({3, 2}), Tensor64({2, 2}), 0.9);
        } catch (const DimensionError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "length mismatch accepted"; }
    }
    return made("retention.three_forms", ok,
                ok ? "max cross-form diff " + fmt(worst) : why);
}

CheckResult check_retention_causality(std::uint64_t seed) {
    Prng rng(seed);
    std::size_t n = 32, d = 8;
    Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
             v = rand_tensor(rng, {n, d});
    Tensor64 base = retention_parallel(q, k, v, 0.96875);
    bool ok = true;
    for (std::size_t p : {std::size_t(0), std::size_t(7), std::size_t(30)}) {
        Tensor64 q2 = q, k2 = k, v2 = v;
        for (std::size_t i = p + 1; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                q2.at(i, c) += rng.uniform(-1, 1);
                k2.at(i, c) += rng.uniform(-1, 1);
                v2.at(i, c) += rng.uniform(-1, 1);
            }
        Tensor64 out = retention_parallel(q2, k2, v2, 0.96875);
        for (std::size_t i = 0; i <= p; ++i)
            if (std::memcmp(base.row(i), out.row(i), d * sizeof(double)) != 0) ok = false;
    }
    return made("retention.causality", ok, "rows before a perturbation are bitwise stable");
}

CheckResult check_retention_streaming(std::uint64_t seed) {
    Prng rng(seed);
    std::size_t n = 48, d = 16, cut = 17;
    Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
             v = rand_tensor(rng, {n, d});
    double gamma = 0.9;
    Tensor64 full = retention_parallel(q, k, v, gamma);

    auto rows = [&](const Tensor64& t, std::size_t a, std::size_t b) {
        return slice_rows(t, a, b);
    };
    // chunkwise prefix, then chunkwise continuation from the carried state
    RetentionState<double> st(d);
    Tensor64 head = retention_chunkwise(rows(q, 0, cut), rows(k, 0, cut), rows(v, 0, cut),
                                        gamma, 7, st);
    Tensor64 tail = retention_chunkwise(rows(q, cut, n), rows(k, cut, n), rows(v, cut, n),
                                        gamma, 7, st);
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor64& part = i < cut ? head : tail;
        std::size_t r = i < cut ? i : i - cut;
        for (std::size_t c = 0; c < d; ++c)
            worst = std::max(worst, std::abs(full.at(i, c) - part.at(r, c)));
    }
    // recurrent prefix feeding a chunkwise suffix
    RetentionState<double> st2(d);
    for (std::size_t t = 0; t < cut; ++t) {
        Tensor64 qt({d}), kt({d}), vt({d});
        std::copy(q.row(t), q.row(t) + d, qt.data());
        std::copy(k.row(t), k.row(t) + d, kt.data());
        std::copy(v.row(t), v.row(t) + d, vt.data());
        retention_recurrent_step(st2, qt, kt, vt, gamma);
    }
    Tensor64 tail2 = retention_chunkwise(rows(q, cut, n), rows(k, cut, n), rows(v, cut, n),
                                         gamma, 5, st2);
    for (std::size_t i = cut; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            worst = std::max(worst, std::abs(full.at(i, c) - tail2.at(i - cut, c)));
    bool pass = worst <= 1e-9;
    return made("retention.streaming", pass, "max continuation diff " + fmt(worst));
}

// ---------------------------------------------------------------------------
// msr

namespace {

MsrParams<double> random_msr(std::uint64_t seed, std::size_t d_model, std::size_t heads) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = d_model;
    cfg.heads = heads;
    cfg.vocab_size = 8;
    cfg.seed = seed;
    return init_params<double>(cfg).blocks[0].msr;
}

} // namespace

CheckResult check_msr_layer(std::uint64_t seed) {
    Prng rng(seed);
    std::size_t n = 64, d_model = 32, h = 4;
    MsrParams<double> p = random_msr(seed, d_model, h);
    Tensor64 x = rand_tensor(rng, {n, d_model});
    double worst = 0;
    for (bool stab : {false, true}) {
        Tensor64 par = msr_forward(x, p, ExecMode::kParallel, nullptr, 16, stab);
        auto rst = fresh_states<double>(h, d_model / h);
        worst = std::max(worst,
                         max_abs_diff(par, msr_forward(x, p, ExecMode::kRecurrent, &rst, 16,
                                                       stab)));
        for (std::size_t B : {std::size_t(1), std::size_t(5), std::size_t(16), n}) {
            auto cst = fresh_states<double>(h, d_model / h);
            worst = std::max(worst, max_abs_diff(par, msr_forward(x, p, ExecMode::kChunkwise,
                                                                  &cst, B, stab)));
        }
    }
    bool ok = worst <= 1e-9;
    std::string why = "max cross-mode diff " + fmt(worst);

    // all-zero weights gate everything to zero
    {
        ModelConfig zc;
        zc.d_model = d_model;
        zc.heads = h;
        zc.vocab_size = 8;
        MsrParams<double> zp = zero_params<double>(zc).blocks[0].msr;
        zp.gammas = head_gammas<double>(h);
        zp.xpos = make_xpos<double>(d_model / h);
        Tensor64 out = msr_forward(x, zp, ExecMode::kParallel, nullptr, 16, false);
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i] != 0.0) { ok = false; why = "zero weights"; }
    }
    // single head reduces to one gated retention head at gamma = 1 - 2^-5
    {
        std::size_t d1 = 8, n1 = 10;
        MsrParams<double> p1 = random_msr(seed + 3, d1, 1);
        Tensor64 x1 = rand_tensor(rng, {n1, d1});
        Tensor64 got = msr_forward(x1, p1, ExecMode::kParallel, nullptr, 4, false);
        Tensor64 q = xpos_apply(matmul(x1, p1.wq), p1.xpos, 0, false);
        Tensor64 k = xpos_apply(matmul(x1, p1.wk), p1.xpos, 0, false);
        Tensor64 ret = retention_parallel(q, k, matmul(x1, p1.wv), 0.96875);
        Tensor64 y = group_norm(ret, 1, kGroupNormEps, p1.gn_scale, p1.gn_shift);
        Tensor64 expect = matmul(hadamard(swish(matmul(x1, p1.wg)), y), p1.wo);
        if (max_abs_diff(got, expect) > 1e-12) { ok = false; why = "single-head reduction"; }
    }
    // head gamma schedule goldens
    {
        auto g1 = head_gammas<double>(1);
        auto g3 = head_gammas<double>(3);
        if (g1[0] != 0.96875 || g3[0] != 0.96875 || g3[1] != 0.984375 || g3[2] != 0.9921875) {
            ok = false;
            why = "head_gammas goldens";
        }
        auto g16 = head_gammas<double>(16);
        for (std::size_t i = 0; i < 16; ++i) {
            if (!(g16[i] > 0.0 && g16[i] < 1.0)) { ok = false; why = "gamma range"; }
            if (i && !(g16[i] > g16[i - 1])) { ok = false; why = "gamma monotonicity"; }
        }
        try {
            head_gammas<double>(0);
            ok = false;
            why = "h=0 accepted";
        } catch (const ParameterError&) {
        }
    }
    // state-contract errors
    {
        bool threw = false;
        try {
            msr_forward(x, p, ExecMode::kRecurrent, nullptr, 16, false);
        } catch (const ContractError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "recurrent without states"; }
        threw = false;
        auto st = fresh_states<double>(h, d_model / h);
        try {
            msr_forward(x, p, ExecMode::kParallel, &st, 16, false);
        } catch (const ContractError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "parallel with states"; }
    }
    return made("msr.layer", ok, why);
}

CheckResult check_msr_head_symmetry(std::uint64_t seed) {
    Prng rng(seed);
    std::size_t n = 24, d_model = 32, h = 4, d = d_model / h;
    MsrParams<double> p = random_msr(seed, d_model, h);
    Tensor64 x = rand_tensor(rng, {n, d_model});
    Tensor64 base = msr_forward(x, p, ExecMode::kParallel, nullptr, 8, false);

    std::size_t a = 1, b = 2;  // heads to swap
    MsrParams<double> q = p;
    auto swap_cols = [&](Tensor64& w) {
        for (std::size_t r = 0; r < w.rows(); ++r)
            for (std::size_t c = 0; c < d; ++c)
                std::swap(w.at(r, a * d + c), w.at(r, b * d + c));
    };
    auto swap_rows = [&](Tensor64& w) {
        for (std::size_t c = 0; c < w.cols(); ++c)
            for (std::size_t r = 0; r < d; ++r)
                std::swap(w.at(a * d + r, c), w.at(b * d + r, c));
    };
    swap_cols(q.wq);
    swap_cols(q.wk);
    swap_cols(q.wv);
    swap_cols(q.wg);  // the gate multiplies head columns elementwise
    swap_rows(q.wo);
    for (std::size_t c = 0; c < d; ++c) {
        std::swap(q.gn_scale[a * d + c], q.gn_scale[b * d + c]);
        std::swap(q.gn_shift[a * d + c], q.gn_shift[b * d + c]);
    }
    std::swap(q.gammas[a], q.gammas[b]);

    Tensor64 permuted = msr_forward(x, q, ExecMode::kParallel, nullptr, 8, false);
    double diff = max_abs_diff(base, permuted);
    return made("msr.head_symmetry", diff <= 1e-9, "max diff after head swap " + fmt(diff));
}

// ---------------------------------------------------------------------------
// model

namespace {

ModelConfig a1_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.vocab_size = 64;
    cfg.chunk_len = 16;
    cfg.max_positions = 256;
    cfg.stabilized = false;
    cfg.seed = seed;
    return cfg;
}

std::vector<int> random_tokens(Prng& rng, std::size_t n, std::size_t vocab) {
    std::vector<int> t(n);
    for (auto& id : t) id = static_cast<int>(rng.below(vocab));
    return t;
}

} // namespace

CheckResult check_model_three_forms(std::uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg = a1_config(seed);
    auto params = init_params<double>(cfg);
    Prng rng(seed + 1);
    std::vector<int> tokens = random_tokens(rng, 128, cfg.vocab_size);

    Tensor64 par = lm_forward(tokens, params, cfg, ExecMode::kParallel);
    double worst = 0;
    for (std::size_t B : {std::size_t(1), std::size_t(16), std::size_t(48), std::size_t(128)}) {
        ModelConfig c2 = cfg;
        c2.chunk_len = B;
        worst = std::max(worst,
                         max_abs_diff(par, lm_forward(tokens, params, c2, ExecMode::kChunkwise)));
    }
    worst = std::max(worst, max_abs_diff(par, lm_forward(tokens, params, cfg,
                                                         ExecMode::kRecurrent)));
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = worst <= 1e-9 && secs < 10.0;
    return made("model.three_forms", pass,
                "max logit diff " + fmt(worst) + ", " + fmt(secs) + " s");
}

CheckResult check_decode_equivalence(std::uint64_t seed) {
    ModelConfig cfg = a1_config(seed);
    auto params = init_params<double>(cfg);
    Prng rng(seed + 2);
    std::vector<int> tokens = random_tokens(rng, 128, cfg.vocab_size);
    Tensor64 par = lm_forward(tokens, params, cfg, ExecMode::kParallel);
    DecodeState<double> state = make_decode_state<double>(cfg);
    double worst = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        Tensor64 row = decode_step(state, tokens[t], params, cfg);
        for (std::size_t c = 0; c < cfg.vocab_size; ++c)
            worst = std::max(worst, std::abs(row[c] - par.at(t, c)));
    }
    return made("model.decode_equivalence", worst <= 1e-9, "max logit diff " + fmt(worst));
}

CheckResult check_causality_bitwise(std::uint64_t seed) {
    std::size_t failures = 0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
        ModelConfig cfg;
        cfg.layers = 2;
        cfg.d_model = 32;
        cfg.heads = 2;
        cfg.vocab_size = 32;
        cfg.chunk_len = 8;
        cfg.max_positions = 64;
        cfg.seed = seed + trial;
        auto params = init_params<double>(cfg);
        Prng rng(seed * 131 + trial);
        std::size_t n = 24;
        std::vector<int> tokens = random_tokens(rng, n, cfg.vocab_size);
        std::size_t p = 1 + rng.below(n - 1);
        std::vector<int> edited = tokens;
        edited[p] = static_cast<int>((edited[p] + 1 + rng.below(cfg.vocab_size - 1)) %
                                     cfg.vocab_size);
        Tensor64 base = lm_forward(tokens, params, cfg, ExecMode::kParallel);
        Tensor64 mod = lm_forward(edited, params, cfg, ExecMode::kParallel);
        for (std::size_t i = 0; i < p; ++i)
            if (std::memcmp(base.row(i), mod.row(i), cfg.vocab_size * sizeof(double)) != 0)
                ++failures;
    }
    return made("model.causality_bitwise", failures == 0,
                failures == 0 ? "100 perturbation trials" :
                                std::to_string(failures) + " rows changed");
}

CheckResult check_decode_state_size(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 3;
    cfg.d_model = 32;
    cfg.heads = 4;
    cfg.vocab_size = 16;
    cfg.max_positions = 2048;
    cfg.seed = seed;
    auto params = init_params<double>(cfg);
    DecodeState<double> st = make_decode_state<double>(cfg);
    Prng rng(seed);
    for (int t = 0; t < 10; ++t)
        decode_step(st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    std::size_t at10 = st.bytes();
    for (int t = 10; t < 1000; ++t)
        decode_step(st, static_cast<int>(rng.below(cfg.vocab_size)), params, cfg);
    std::size_t at1000 = st.bytes();
    std::size_t d = cfg.head_dim();
    std::size_t expect = cfg.layers * cfg.heads * (d * d * sizeof(double) + sizeof(std::size_t)) +
                         sizeof(std::size_t);
    bool pass = at10 == at1000 && at10 == expect;
    return made("model.decode_state_size", pass,
                std::to_string(at10) + " bytes at 10 and 1000 tokens");
}

CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.vocab_size = 24;
    cfg.chunk_len = 8;
    cfg.max_positions = 64;
    cfg.seed = seed;
    auto params = init_params<double>(cfg);
    Prng rng(seed + 5);
    std::vector<int> tokens = random_tokens(rng, 12, cfg.vocab_size);
    Tensor64 before = lm_forward(tokens, params, cfg, ExecMode::kParallel);

    fs::path path = fs::temp_directory_path() /
                    ("retnet_verify_" + std::to_string(seed) + ".ckpt");
    bool ok = true;
    std::string why;
    save_checkpoint(params, cfg, path.string());
    {
        auto [loaded, lcfg] = load_checkpoint<double>(path.string());
        Tensor64 after = lm_forward(tokens, loaded, lcfg, ExecMode::kParallel);
        if (!bits_equal(before, after)) { ok = false; why = "roundtrip not bit-identical"; }
    }
    auto expect_reject = [&](const std::string& name,
                             const std::function<void(std::string&)>& corrupt) {
        std::ifstream in(path, std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        corrupt(data);
        fs::path bad = fs::temp_directory_path() / ("retnet_verify_bad_" + name + ".ckpt");
        std::ofstream out(bad, std::ios::binary);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.close();
        bool threw = false;
        try {
            load_checkpoint<double>(bad.string());
        } catch (const IntegrityError&) {
            threw = true;
        }
        fs::remove(bad);
        if (!threw) { ok = false; why = "corruption accepted: " + name; }
    };
    expect_reject("truncated", [](std::string& d) { d.resize(d.size() - 7); });
    expect_reject("magic", [](std::string& d) { d[0] = 'X'; });
    expect_reject("version", [](std::string& d) { d[4] = '\x7f'; });
    expect_reject("header_mismatch", [](std::string& d) {
        auto at = d.find("d_model=32");
        d.replace(at, 10, "d_model=16");  // same length; blob sizes now disagree
    });
    {
        bool threw = false;
        try {
            load_checkpoint<double>((fs::temp_directory_path() / "retnet_missing.ckpt").string());
        } catch (const Error&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "missing file accepted"; }
    }
    fs::remove(path);
    return made("model.checkpoint", ok, ok ? "roundtrip bit-identical, corruption rejected" : why);
}

// ---------------------------------------------------------------------------
// attention baseline

CheckResult check_attention_baseline(std::uint64_t seed) {
    Prng rng(seed);
    bool ok = true;
    std::string why;
    {
        Tensor64 q = rand_tensor(rng, {1, 6}), k = rand_tensor(rng, {1, 6}),
                 v = rand_tensor(rng, {1, 6});
        if (max_abs_diff(attention(q, k, v, true), v) > 1e-15) { ok = false; why = "n=1"; }
    }
    {
        std::size_t n = 9, d = 4;
        Tensor64 q = rand_tensor(rng, {n, d});
        Tensor64 k({n, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) k.at(i, c) = 0.37 * double(c + 1);
        Tensor64 v = rand_tensor(rng, {n, d});
        Tensor64 out = attention(q, k, v, true);
        for (std::size_t i = 0; i < n && ok; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double mean = 0;
                for (std::size_t m = 0; m <= i; ++m) mean += v.at(m, c);
                mean /= double(i + 1);
                if (std::abs(out.at(i, c) - mean) > 1e-12) { ok = false; why = "uniform keys"; }
            }
        Tensor64 w = attention_weights(q, k, true);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) {
                s += w.at(i, j);
                if (j > i && w.at(i, j) != 0.0) { ok = false; why = "causal weight"; }
            }
            if (std::abs(s - 1.0) > 1e-12) { ok = false; why = "row sums"; }
        }
    }
    {
        // incremental decode matches the full forward, cache grows one per token
        ModelConfig cfg;
        cfg.layers = 2;
        cfg.d_model = 32;
        cfg.heads = 4;
        cfg.vocab_size = 20;
        cfg.max_positions = 64;
        cfg.seed = seed;
        auto params = init_baseline<double>(cfg);
        std::vector<int> tokens = random_tokens(rng, 20, cfg.vocab_size);
        Tensor64 full = baseline_forward(tokens, params, cfg);
        BaselineDecodeState<double> st = make_baseline_state<double>(cfg);
        double worst = 0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            Tensor64 row = baseline_decode_step(st, tokens[t], params, cfg);
            for (std::size_t c = 0; c < cfg.vocab_size; ++c)
                worst = std::max(worst, std::abs(row[c] - full.at(t, c)));
            if (st.layers[0].len != t + 1) { ok = false; why = "cache length"; }
        }
        if (worst > 1e-9) { ok = false; why = "incremental vs full " + fmt(worst); }
        std::size_t d = cfg.head_dim();
        std::size_t expect = cfg.layers * (2 * cfg.heads * tokens.size() * d * sizeof(double)) +
                             cfg.layers * sizeof(std::size_t) + sizeof(std::size_t);
        // bytes() counts the k/v payload plus counters; growth must be linear
        if (st.bytes() != expect) { ok = false; why = "cache byte accounting"; }
    }
    return made("attention.baseline", ok, ok ? "softmax rows, incremental decode, cache growth" : why);
}

// ---------------------------------------------------------------------------
// training

CheckResult check_training_pieces(std::uint64_t seed) {
    bool ok = true;
    std::string why;
    {
        TaskBatch a = make_copy_task(seed, 4, 64, 16);
        TaskBatch b = make_copy_task(seed, 4, 64, 16);
        if (a.inputs.ids != b.inputs.ids || a.targets.ids != b.targets.ids) {
            ok = false;
            why = "copy determinism";
        }
        for (std::size_t r = 0; r < 4 && ok; ++r) {
            std::size_t masked = 0;
            for (std::size_t j = 0; j < 64; ++j) {
                if (j >= 32 && a.targets.at(r, j) != a.inputs.at(r, j - 32)) {
                    ok = false;
                    why = "copy target relation";
                }
                masked += a.mask[r * 64 + j];
            }
            if (a.inputs.at(r, 32) != 0) { ok = false; why = "separator"; }
            if (masked != 31) { ok = false; why = "mask count"; }
        }
        TaskBatch c = make_recall_task(seed, 4, 13, 16);
        for (std::size_t r = 0; r < 4 && ok; ++r) {
            int qk = c.inputs.at(r, 12);
            int expect = -1;
            for (std::size_t i = 0; i < 6; ++i)
                if (c.inputs.at(r, 2 * i) == qk) expect = c.inputs.at(r, 2 * i + 1);
            if (expect != c.targets.at(r, 12)) { ok = false; why = "recall target"; }
            for (std::size_t j = 0; j + 1 < 13; ++j)
                if (c.mask[r * 13 + j]) { ok = false; why = "recall mask"; }
        }
    }
    {
        std::size_t vsz = 16;
        Tensor64 uniform({2, vsz});
        std::vector<int> targets{3, 9};
        std::vector<std::uint8_t> mask{1, 1};
        double loss = cross_entropy_value(uniform, targets, mask);
        if (std::abs(loss - std::log(double(vsz))) > 1e-12) { ok = false; why = "uniform CE"; }
        Tensor64 confident({1, vsz});
        confident.at(0, 5) = 50.0;
        if (cross_entropy_value(confident, {5}, {1}) > 1e-12) { ok = false; why = "confident CE"; }
        Prng rng(seed);
        Tensor64 logits = rand_tensor(rng, {3, vsz}, -2, 2);
        std::vector<int> t3{1, 14, 7};
        std::vector<std::uint8_t> m3{1, 0, 1};
        double got = cross_entropy_value(logits, t3, m3);
        Tensor64 sm = softmax_rows(logits);  // literal -log(softmax) oracle
        double expect = (-std::log(sm.at(0, 1)) - std::log(sm.at(2, 7))) / 2.0;
        if (std::abs(got - expect) > 1e-10) { ok = false; why = "CE oracle"; }
        bool threw = false;
        try {
            cross_entropy_value(logits, t3, {0, 0, 0});
        } catch (const ContractError&) {
            threw = true;
        }
        if (!threw) { ok = false; why = "empty mask accepted"; }
    }
    {
        // adam: zero gradient is a no-op; constant gradient step magnitude -> lr
        ModelConfig mc;
        mc.layers = 1;
        mc.d_model = 8;
        mc.heads = 2;
        mc.vocab_size = 4;
        mc.seed = seed;
        auto params = init_params<double>(mc);
        auto copy = params;
        AdamState st = make_adam_state(params);
        std::vector<Tensor64> zero_grads;
        visit_params(params, [&](const std::string&, const Tensor64& t) {
            zero_grads.emplace_back(t.shape());
        });
        TrainConfig tc;
        adam_step(params, zero_grads, st, tc);
        std::vector<const Tensor64*> prior;
        visit_params(copy, [&](const std::string&, const Tensor64& t) { prior.push_back(&t); });
        bool same = true;
        std::size_t idx = 0;
        visit_params(params, [&](const std::string&, const Tensor64& t) {
            if (!bits_equal(*prior[idx], t)) same = false;
            ++idx;
        });
        if (!same) { ok = false; why = "adam zero-grad"; }

        auto p2 = init_params<double>(mc);
        AdamState st2 = make_adam_state(p2);
        std::vector<Tensor64> const_grads;
        visit_params(p2, [&](const std::string&, const Tensor64& t) {
            Tensor64 g(t.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.73;
            const_grads.push_back(g);
        });
        double before = p2.embedding[0];
        for (int t = 0; t < 400; ++t) {
            before = p2.embedding[0];
            adam_step(p2, const_grads, st2, tc);
        }
        double delta = std::abs(p2.embedding[0] - before);
        if (std::abs(delta - tc.learning_rate) > 0.01 * tc.learning_rate) {
            ok = false;
            why = "adam fixed-point |delta| = " + fmt(delta);
        }
    }
    return made("training.pieces", ok, ok ? "tasks, cross entropy, adam" : why);
}

CheckResult check_training_overfit(std::uint64_t seed) {
    ModelConfig mc;
    mc.layers = 1;
    mc.d_model = 32;
    mc.heads = 2;
    mc.ffn_dim = 64;
    mc.vocab_size = 8;
    mc.chunk_len = 4;
    mc.max_positions = 32;
    mc.stabilized = true;
    mc.seed = seed;
    TrainConfig tc;
    tc.learning_rate = 1.5e-2;
    auto params = init_params<double>(mc);
    AdamState adam = make_adam_state(params);
    TaskBatch batch = make_copy_task(seed + 1, 1, 8, mc.vocab_size);

    double initial = 0, final = 0;
    for (int step = 0; step < 50; ++step) {
        Tape tape;
        auto bound = bind_params(tape, params, mc);
        int logits = model_logits_tape(tape, bound, batch.inputs.row(0));
        int loss = tape.cross_entropy(logits, batch.targets.row(0), batch.mask_row(0));
        double lv = tape.value(loss)[0];
        if (step == 0) initial = lv;
        final = lv;
        auto grads = collect_param_grads(tape, bound, backward(tape, loss));
        adam_step(params, grads, adam, tc);
    }
    bool pass = std::isfinite(final) && final < 0.1 * initial;
    return made("training.overfit", pass,
                "loss " + fmt(initial) + " -> " + fmt(final) + " in 50 steps");
}

CheckResult check_training_determinism(std::uint64_t seed) {
    ModelConfig mc;
    mc.layers = 1;
    mc.d_model = 16;
    mc.heads = 2;
    mc.vocab_size = 8;
    mc.chunk_len = 4;
    mc.max_positions = 32;
    mc.stabilized = true;
    mc.seed = seed;
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 2;
    tc.seq_len = 8;
    tc.eval_interval = 2;
    tc.seed = seed;
    TrainResult a = train(mc, tc);
    TrainResult b = train(mc, tc);
    bool same = true;
    std::size_t idx = 0;
    std::vector<const Tensor64*> av;
    visit_params(a.params, [&](const std::string&, const Tensor64& t) { av.push_back(&t); });
    visit_params(b.params, [&](const std::string&, const Tensor64& t) {
        if (!bits_equal(*av[idx], t)) same = false;
        ++idx;
    });
    bool metrics_same = a.metrics.size() == b.metrics.size();
    for (std::size_t i = 0; metrics_same && i < a.metrics.size(); ++i)
        metrics_same = a.metrics[i].loss == b.metrics[i].loss &&
                       a.metrics[i].accuracy == b.metrics[i].accuracy;
    return made("training.determinism", same && metrics_same,
                "two 5-step runs bit-identical");
}

std::vector<CheckResult> run_verification(std::uint64_t seed) {
    std::vector<CheckResult> results;
    results.push_back(check_matmul_oracle(seed));
    results.push_back(check_groupnorm_stats(seed + 1));
    results.push_back(check_softmax_invariants(seed + 2));
    results.push_back(check_activation_monotonicity());
    results.push_back(check_tape_basics(seed + 3));
    results.push_back(check_primitive_gradients(seed + 4));
    results.push_back(check_model_gradient(seed + 5));
    results.push_back(check_decay_mask_properties());
    results.push_back(check_xpos_identities(seed + 6));
    results.push_back(check_retention_forms(seed + 7));
    results.push_back(check_retention_causality(seed + 8));
    results.push_back(check_retention_streaming(seed + 9));
    results.push_back(check_msr_layer(seed + 10));
    results.push_back(check_msr_head_symmetry(seed + 11));
    results.push_back(check_model_three_forms(seed + 12));
    results.push_back(check_decode_equivalence(seed + 13));
    results.push_back(check_causality_bitwise(seed + 14));
    results.push_back(check_decode_state_size(seed + 15));
    results.push_back(check_checkpoint_roundtrip(seed + 16));
    results.push_back(check_attention_baseline(seed + 17));
    results.push_back(check_training_pieces(seed + 18));
    results.push_back(check_training_overfit(seed + 19));
    results.push_back(check_training_determinism(seed + 20));
    return results;
}

} // namespace retnet
