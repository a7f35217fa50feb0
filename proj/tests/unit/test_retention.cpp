// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "golden_values.hpp"
#include "helpers.hpp"
#include "retnet/retention.hpp"
#include "retnet/verify.hpp"

using namespace retnet;
using test_helpers::bits_equal;
using test_helpers::max_abs_diff;
using test_helpers::rand_tensor;

TEST_CASE("decay mask") {
    SUBCASE("golden 3x3 at gamma 0.5") {
        auto m = decay_mask<double>(3, 0.5);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(m.entries.at(i, j) == golden::kDecayMask3Gamma05[i][j]);
    }
    SUBCASE("single token") { CHECK(decay_mask<double>(1, 0.9).entries[0] == 1.0); }
    SUBCASE("gamma 1 is the causal mask") {
        auto m = decay_mask<double>(4, 1.0);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(m.entries.at(i, j) == (j <= i ? 1.0 : 0.0));
    }
    SUBCASE("parameter errors") {
        CHECK_THROWS_AS(decay_mask<double>(0, 0.5), ParameterError);
        CHECK_THROWS_AS(decay_mask<double>(3, 0.0), ParameterError);
        CHECK_THROWS_AS(decay_mask<double>(3, 1.0001), ParameterError);
        CHECK_THROWS_AS(decay_mask<double>(3, std::nan("")), ParameterError);
    }
    SUBCASE("entries non-increasing with distance") {
        auto m = decay_mask<double>(8, 0.7);
        for (std::size_t i = 1; i < 8; ++i)
            for (std::size_t j = 1; j <= i; ++j)
                CHECK(m.entries.at(i, j) >= m.entries.at(i, j - 1));
    }
    SUBCASE("multiplicativity and support") { CHECK(check_decay_mask_properties().pass); }
}

TEST_CASE("xpos rotation") {
    Prng rng(301);
    auto xp = make_xpos<double>(8);
    SUBCASE("zero angles are the identity") {
        XPos<double> zero = xp;
        for (std::size_t j = 0; j < zero.theta.size(); ++j) zero.theta[j] = 0.0;
        Tensor64 x = rand_tensor(rng, {4, 8});
        CHECK(bits_equal(xpos_apply(x, zero, 3, false), x));
    }
    SUBCASE("theta ladder") {
        CHECK(xp.theta[0] == 1.0);
        CHECK(xp.theta[1] == doctest::Approx(std::pow(10000.0, -2.0 / 8.0)));
    }
    SUBCASE("pair norms preserved") {
        Tensor64 x = rand_tensor(rng, {5, 8});
        Tensor64 y = xpos_apply(x, xp, 11, false);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(std::abs(std::hypot(x.at(i, 2 * j), x.at(i, 2 * j + 1)) -
                               std::hypot(y.at(i, 2 * j), y.at(i, 2 * j + 1))) <= 1e-12);
    }
    SUBCASE("relative position identity") { CHECK(check_xpos_identities(302).pass); }
    SUBCASE("odd width rejected") {
        CHECK_THROWS_AS(make_xpos<double>(5), DimensionError);
        CHECK_THROWS_AS(xpos_apply(Tensor64({2, 6}), xp, 0, false), DimensionError);
    }
}

TEST_CASE("retention worked example") {
    Tensor64 q = Tensor64::matrix({{1.0}, {1.0}});
    Tensor64 v = Tensor64::matrix({{2.0}, {3.0}});
    SUBCASE("parallel") {
        Tensor64 out = retention_parallel(q, q, v, 0.5);
        CHECK(out[0] == doctest::Approx(golden::kWorkedRetention[0]).epsilon(1e-12));
        CHECK(out[1] == doctest::Approx(golden::kWorkedRetention[1]).epsilon(1e-12));
    }
    SUBCASE("recurrent, step by step") {
        RetentionState<double> st(1);
        Tensor64 one = Tensor64::vector({1.0});
        Tensor64 o1 = retention_recurrent_step(st, one, one, Tensor64::vector({2.0}), 0.5);
        CHECK(o1[0] == doctest::Approx(2.0));
        CHECK(st.s[0] == doctest::Approx(2.0));
        CHECK(st.position == 1);
        Tensor64 o2 = retention_recurrent_step(st, one, one, Tensor64::vector({3.0}), 0.5);
        CHECK(o2[0] == doctest::Approx(4.0));
        CHECK(st.s[0] == doctest::Approx(4.0));
    }
    SUBCASE("chunkwise with B=1") {
        RetentionState<double> st(1);
        Tensor64 out = retention_chunkwise(q, q, v, 0.5, 1, st);
        CHECK(out[0] == doctest::Approx(2.0));
        CHECK(out[1] == doctest::Approx(4.0));
        CHECK(st.position == 2);
    }
}

TEST_CASE("retention properties") {
    Prng rng(303);
    SUBCASE("single chunk equals parallel bitwise") {
        std::size_t n = 9, d = 4;
        Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
                 v = rand_tensor(rng, {n, d});
        Tensor64 par = retention_parallel(q, k, v, 0.9);
        RetentionState<double> st(d);
        CHECK(bits_equal(retention_chunkwise(q, k, v, 0.9, n, st), par));
    }
    SUBCASE("first step from zero state") {
        std::size_t d = 5;
        Tensor64 q = rand_tensor(rng, {d}), k = rand_tensor(rng, {d}),
                 v = rand_tensor(rng, {d});
        RetentionState<double> st(d);
        Tensor64 o = retention_recurrent_step(st, q, k, v, 0.9);
        double qk = 0;
        for (std::size_t c = 0; c < d; ++c) qk += q[c] * k[c];
        for (std::size_t c = 0; c < d; ++c) CHECK(o[c] == doctest::Approx(qk * v[c]));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                CHECK(st.s.at(i, j) == doctest::Approx(k[i] * v[j]));
    }
    SUBCASE("cross-form equivalence, odd sizes and chunk lengths") {
        for (std::size_t n : {1ul, 5ul, 33ul}) {
            for (double gamma : {0.9, 0.999}) {
                std::size_t d = 8;
                Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
                         v = rand_tensor(rng, {n, d});
                Tensor64 par = retention_parallel(q, k, v, gamma);
                for (std::size_t B : {std::size_t(1), std::size_t(3), std::size_t(7), n}) {
                    RetentionState<double> st(d);
                    CHECK(max_abs_diff(retention_chunkwise(q, k, v, gamma, B, st), par) <=
                          1e-9);
                }
            }
        }
    }
    SUBCASE("full sweep, streaming and causality") {
        CHECK(check_retention_forms(304).pass);
        CHECK(check_retention_streaming(305).pass);
        CHECK(check_retention_causality(306).pass);
    }
    SUBCASE("errors") {
        RetentionState<double> st(2);
        CHECK_THROWS_AS(
            retention_chunkwise(Tensor64({2, 2}), Tensor64({2, 2}), Tensor64({2, 2}), 0.9, 0,
                                st),
            ParameterError);
        CHECK_THROWS_AS(
            retention_parallel(Tensor64({2, 2}), Tensor64({2, 2}), Tensor64({2, 2}), 1.01),
            ParameterError);
        CHECK_THROWS_AS(
            retention_parallel(Tensor64({2, 2}), Tensor64({3, 2}), Tensor64({2, 2}), 0.9),
            DimensionError);
    }
}

TEST_CASE("stabilized mode stays form-equivalent") {
    Prng rng(307);
    std::size_t n = 21, d = 6;
    Tensor64 q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d}),
             v = rand_tensor(rng, {n, d});
    Tensor64 par = retention_parallel(q, k, v, 0.96875, true);
    RetentionState<double> rst(d);
    for (std::size_t t = 0; t < n; ++t) {
        Tensor64 qt({d}), kt({d}), vt({d});
        std::copy(q.row(t), q.row(t) + d, qt.data());
        std::copy(k.row(t), k.row(t) + d, kt.data());
        std::copy(v.row(t), v.row(t) + d, vt.data());
        Tensor64 o = retention_recurrent_step(rst, qt, kt, vt, 0.96875, true);
        for (std::size_t c = 0; c < d; ++c)
            CHECK(std::abs(o[c] - par.at(t, c)) <= 1e-9);
    }
    RetentionState<double> cst(d);
    CHECK(max_abs_diff(retention_chunkwise(q, k, v, 0.96875, 4, cst, true), par) <= 1e-9);
}
