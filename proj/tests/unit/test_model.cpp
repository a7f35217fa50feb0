// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>

#include "helpers.hpp"
#include "retnet/checkpoint.hpp"
#include "retnet/model.hpp"
#include "retnet/verify.hpp"

using namespace retnet;
using test_helpers::bits_equal;
using test_helpers::max_abs_diff;
using test_helpers::rand_tensor;

namespace {

ModelConfig small_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.d_model = 32;
    cfg.heads = 2;
    cfg.vocab_size = 24;
    cfg.chunk_len = 8;
    cfg.max_positions = 128;
    cfg.seed = seed;
    return cfg;
}

std::vector<int> tokens_of(Prng& rng, std::size_t n, std::size_t vocab) {
    std::vector<int> t(n);
    for (auto& id : t) id = static_cast<int>(rng.below(vocab));
    return t;
}

} // namespace

TEST_CASE("init_params") {
    ModelConfig cfg = small_config(9);
    SUBCASE("deterministic per seed") {
        auto a = init_params<double>(cfg);
        auto b = init_params<double>(cfg);
        CHECK(bits_equal(a.embedding, b.embedding));
        CHECK(bits_equal(a.blocks[1].msr.wq, b.blocks[1].msr.wq));
        ModelConfig other = cfg;
        other.seed = 10;
        auto c = init_params<double>(other);
        CHECK(!bits_equal(a.embedding, c.embedding));
    }
    SUBCASE("embedding stddev near d_model^-1/2") {
        ModelConfig wide = cfg;
        wide.d_model = 64;
        wide.heads = 4;
        wide.vocab_size = 256;
        auto p = init_params<double>(wide);
        double mean = 0;
        for (std::size_t i = 0; i < p.embedding.size(); ++i) mean += p.embedding[i];
        mean /= double(p.embedding.size());
        double var = 0;
        for (std::size_t i = 0; i < p.embedding.size(); ++i) {
            double d = p.embedding[i] - mean;
            var += d * d;
        }
        var /= double(p.embedding.size());
        double target = 1.0 / std::sqrt(64.0);
        CHECK(std::abs(std::sqrt(var) - target) < 0.1 * target);
    }
    SUBCASE("gamma schedule and theta ladder are installed") {
        auto p = init_params<double>(cfg);
        CHECK(p.blocks[0].msr.gammas[0] == 0.96875);
        CHECK(p.blocks[0].msr.xpos.theta[0] == 1.0);
        CHECK(p.blocks[0].msr.heads == cfg.heads);
    }
    SUBCASE("invalid config rejected") {
        ModelConfig bad = cfg;
        bad.heads = 5;  // 32 % 5 != 0
        CHECK_THROWS_AS(init_params<double>(bad), ParameterError);
        bad = cfg;
        bad.vocab_size = 1;
        CHECK_THROWS_AS(init_params<double>(bad), ParameterError);
    }
}

TEST_CASE("block forward") {
    Prng rng(902);
    ModelConfig cfg = small_config(11);
    SUBCASE("zero weights act as the identity") {
        auto zp = zero_params<double>(cfg);
        zp.blocks[0].msr.gammas = head_gammas<double>(cfg.heads);
        zp.blocks[0].msr.xpos = make_xpos<double>(cfg.head_dim());
        Tensor64 x = rand_tensor(rng, {5, cfg.d_model});
        Tensor64 y = block_forward(x, zp.blocks[0], ExecMode::kParallel, nullptr,
                                   cfg.chunk_len, false);
        CHECK(bits_equal(y, x));
    }
    SUBCASE("residual wiring") {
        auto p = init_params<double>(cfg);
        const auto& b = p.blocks[0];
        Tensor64 x = rand_tensor(rng, {5, cfg.d_model});
        Tensor64 got = block_forward(x, b, ExecMode::kParallel, nullptr, cfg.chunk_len, false);
        Tensor64 ln1 = layer_norm(x, kLayerNormEps, b.ln1_scale, b.ln1_shift);
        Tensor64 y = add(msr_forward(ln1, b.msr, ExecMode::kParallel, nullptr, cfg.chunk_len,
                                     false),
                         x);
        Tensor64 ln2 = layer_norm(y, kLayerNormEps, b.ln2_scale, b.ln2_shift);
        Tensor64 ffn = matmul(gelu(matmul(ln2, b.w1)), b.w2);
        CHECK(max_abs_diff(got, add(ffn, y)) == 0.0);
        // dropping the residuals visibly changes the output
        CHECK(max_abs_diff(got, add(ffn, msr_forward(ln1, b.msr, ExecMode::kParallel, nullptr,
                                                     cfg.chunk_len, false))) > 1e-6);
    }
}

TEST_CASE("lm_forward") {
    ModelConfig cfg = small_config(13);
    auto params = init_params<double>(cfg);
    Prng rng(903);
    SUBCASE("causality is exact") {
        std::vector<int> tokens = tokens_of(rng, 12, cfg.vocab_size);
        Tensor64 base = lm_forward(tokens, params, cfg, ExecMode::kParallel);
        std::vector<int> edited = tokens;
        edited[7] = (edited[7] + 1) % static_cast<int>(cfg.vocab_size);
        Tensor64 mod = lm_forward(edited, params, cfg, ExecMode::kParallel);
        for (std::size_t i = 0; i < 7; ++i)
            CHECK(std::memcmp(base.row(i), mod.row(i), cfg.vocab_size * sizeof(double)) == 0);
        CHECK(std::memcmp(base.row(7), mod.row(7), cfg.vocab_size * sizeof(double)) != 0);
    }
    SUBCASE("single token gives one row") {
        Tensor64 logits = lm_forward({3}, params, cfg, ExecMode::kParallel);
        CHECK(logits.rows() == 1);
        CHECK(logits.cols() == cfg.vocab_size);
    }
    SUBCASE("parallel vs chunkwise whole-model") {
        std::vector<int> tokens = tokens_of(rng, 30, cfg.vocab_size);
        Tensor64 par = lm_forward(tokens, params, cfg, ExecMode::kParallel);
        CHECK(max_abs_diff(par, lm_forward(tokens, params, cfg, ExecMode::kChunkwise)) <=
              1e-9);
        CHECK(max_abs_diff(par, lm_forward(tokens, params, cfg, ExecMode::kRecurrent)) <=
              1e-9);
    }
    SUBCASE("input validation") {
        CHECK_THROWS_AS(lm_forward({-1}, params, cfg, ExecMode::kParallel), InputError);
        CHECK_THROWS_AS(lm_forward({static_cast<int>(cfg.vocab_size)}, params, cfg,
                                   ExecMode::kParallel),
                        InputError);
        std::vector<int> too_long(cfg.max_positions + 1, 0);
        CHECK_THROWS_AS(lm_forward(too_long, params, cfg, ExecMode::kParallel), InputError);
    }
}

TEST_CASE("decode_step") {
    ModelConfig cfg = small_config(17);
    auto params = init_params<double>(cfg);
    Prng rng(904);
    SUBCASE("matches the parallel forward") {
        std::vector<int> tokens = tokens_of(rng, 20, cfg.vocab_size);
        Tensor64 par = lm_forward(tokens, params, cfg, ExecMode::kParallel);
        DecodeState<double> st = make_decode_state<double>(cfg);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            Tensor64 row = decode_step(st, tokens[t], params, cfg);
            for (std::size_t c = 0; c < cfg.vocab_size; ++c)
                CHECK(std::abs(row[c] - par.at(t, c)) <= 1e-9);
        }
        CHECK(st.position == tokens.size());
    }
    SUBCASE("greedy generation is deterministic") {
        auto run = [&]() {
            DecodeState<double> st = make_decode_state<double>(cfg);
            std::vector<int> out;
            Tensor64 row = decode_step(st, 1, params, cfg);
            for (int i = 0; i < 10; ++i) {
                int next = argmax_token(row);
                out.push_back(next);
                row = decode_step(st, next, params, cfg);
            }
            return out;
        };
        CHECK(run() == run());
    }
    SUBCASE("constant state size and position cap") {
        CHECK(check_decode_state_size(905).pass);
        ModelConfig tiny = cfg;
        tiny.max_positions = 3;
        DecodeState<double> st = make_decode_state<double>(tiny);
        decode_step(st, 0, params, tiny);
        decode_step(st, 0, params, tiny);
        decode_step(st, 0, params, tiny);
        CHECK_THROWS_AS(decode_step(st, 0, params, tiny), InputError);
    }
    SUBCASE("argmax ties break to the lowest id") {
        Tensor64 row({4});
        row[0] = 1.0;
        row[1] = 3.0;
        row[2] = 3.0;
        row[3] = 0.0;
        CHECK(argmax_token(row) == 1);
    }
}

TEST_CASE("checkpoint integrity") {
    CHECK(check_checkpoint_roundtrip(906).pass);
}

TEST_CASE("whole-model three forms and causality suites") {
    CHECK(check_model_three_forms(907).pass);
    CHECK(check_decode_equivalence(908).pass);
}
