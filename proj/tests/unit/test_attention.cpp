// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"
#include "retnet/attention.hpp"
#include "retnet/verify.hpp"

using namespace retnet;
using test_helpers::max_abs_diff;
using test_helpers::rand_tensor;

TEST_CASE("attention op") {
    Prng rng(501);
    SUBCASE("single token returns v") {
        Tensor64 q = rand_tensor(rng, {1, 6}), k = rand_tensor(rng, {1, 6}),
                 v = rand_tensor(rng, {1, 6});
        CHECK(max_abs_diff(attention(q, k, v, true), v) == 0.0);
    }
    SUBCASE("identical keys spread weight uniformly") {
        std::size_t n = 7, d = 4;
        Tensor64 q = rand_tensor(rng, {n, d});
        Tensor64 k({n, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) k.at(i, c) = 0.3 * double(c);
        Tensor64 w = attention_weights(q, k, true);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j)
                CHECK(w.at(i, j) == doctest::Approx(1.0 / double(i + 1)).epsilon(1e-12));
    }
    SUBCASE("rows are distributions over visible positions") {
        Tensor64 q = rand_tensor(rng, {5, 8}), k = rand_tensor(rng, {5, 8});
        Tensor64 w = attention_weights(q, k, true);
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(w.at(i, j) >= 0.0);
                if (j > i) CHECK(w.at(i, j) == 0.0);
                s += w.at(i, j);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(attention(Tensor64({2, 3}), Tensor64({2, 4}), Tensor64({2, 4}), true),
                        DimensionError);
        CHECK_THROWS_AS(attention(Tensor64({2, 3}), Tensor64({3, 3}), Tensor64({2, 3}), true),
                        DimensionError);
    }
}

TEST_CASE("mha incremental path") {
    Prng rng(502);
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.vocab_size = 12;
    cfg.max_positions = 64;
    cfg.seed = 502;
    auto base = init_baseline<double>(cfg);
    const AttnParams<double>& p = base.blocks[0].attn;
    std::size_t n = 12;
    Tensor64 x = rand_tensor(rng, {n, cfg.d_model});
    Tensor64 full = mha_forward(x, p, static_cast<KvCache<double>*>(nullptr));
    KvCache<double> cache(cfg.heads, cfg.head_dim());
    Tensor64 inc({n, cfg.d_model});
    for (std::size_t t = 0; t < n; ++t) {
        Tensor64 xt({1, cfg.d_model});
        std::copy(x.row(t), x.row(t) + cfg.d_model, xt.data());
        Tensor64 o = mha_forward(xt, p, &cache);
        std::copy(o.data(), o.data() + cfg.d_model, inc.row(t));
        CHECK(cache.len == t + 1);  // the cost retention does not pay
    }
    CHECK(max_abs_diff(full, inc) <= 1e-9);
    std::size_t before = cache.bytes();
    Tensor64 xt({1, cfg.d_model});
    mha_forward(xt, p, &cache);
    CHECK(cache.bytes() - before == 2 * cfg.heads * cfg.head_dim() * sizeof(double));
}

TEST_CASE("baseline model invariants") {
    CHECK(check_attention_baseline(503).pass);
}
