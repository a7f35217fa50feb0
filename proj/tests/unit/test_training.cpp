// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "retnet/autodiff.hpp"
#include "retnet/model_tape.hpp"
#include "retnet/training.hpp"
#include "retnet/verify.hpp"

using namespace retnet;
using test_helpers::rand_tensor;

TEST_CASE("copy task construction") {
    SUBCASE("deterministic per seed") {
        TaskBatch a = make_copy_task(11, 3, 16, 8);
        TaskBatch b = make_copy_task(11, 3, 16, 8);
        CHECK(a.inputs.ids == b.inputs.ids);
        CHECK(a.targets.ids == b.targets.ids);
        CHECK(a.mask == b.mask);
        TaskBatch c = make_copy_task(12, 3, 16, 8);
        CHECK(a.inputs.ids != c.inputs.ids);
    }
    SUBCASE("layout") {
        std::size_t n = 16;
        TaskBatch b = make_copy_task(21, 4, n, 8);
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(b.inputs.at(r, n / 2) == 0);  // separator
            std::size_t masked = 0;
            for (std::size_t j = 0; j < n; ++j) {
                int id = b.inputs.at(r, j);
                CHECK(id >= 0);
                CHECK(id < 8);
                if (j < n / 2) CHECK(id >= 1);
                if (j >= n / 2) CHECK(b.targets.at(r, j) == b.inputs.at(r, j - n / 2));
                if (j > n / 2) CHECK(b.inputs.at(r, j) == b.inputs.at(r, j - n / 2 - 1));
                masked += b.mask[r * n + j];
                if (b.mask[r * n + j]) CHECK(j > n / 2);
            }
            CHECK(masked == n / 2 - 1);
        }
    }
    SUBCASE("parameter errors") {
        CHECK_THROWS_AS(make_copy_task(1, 2, 15, 8), ParameterError);  // odd n
        CHECK_THROWS_AS(make_copy_task(1, 2, 16, 3), ParameterError);  // tiny vocab
        CHECK_THROWS_AS(make_copy_task(1, 0, 16, 8), ParameterError);
    }
}

TEST_CASE("associative recall construction") {
    TaskBatch b = make_recall_task(31, 5, 9, 12);
    for (std::size_t r = 0; r < 5; ++r) {
        int query = b.inputs.at(r, 8);
        int expected = -1;
        for (std::size_t i = 0; i < 4; ++i) {
            int key = b.inputs.at(r, 2 * i);
            int val = b.inputs.at(r, 2 * i + 1);
            CHECK(key >= 1);
            CHECK(val > key);  // disjoint id ranges
            if (key == query) expected = val;
        }
        CHECK(expected == b.targets.at(r, 8));
        for (std::size_t j = 0; j < 8; ++j) CHECK(b.mask[r * 9 + j] == 0);
        CHECK(b.mask[r * 9 + 8] == 1);
    }
    CHECK_THROWS_AS(make_recall_task(1, 2, 8, 12), ParameterError);   // even n
    CHECK_THROWS_AS(make_recall_task(1, 2, 31, 8), ParameterError);  // too few keys
}

TEST_CASE("cross entropy") {
    SUBCASE("uniform logits give ln V") {
        Tensor64 logits({3, 11});
        double loss = cross_entropy_value(logits, {0, 5, 10}, {1, 1, 1});
        CHECK(loss == doctest::Approx(std::log(11.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct logit goes to zero") {
        Tensor64 logits({1, 6});
        logits.at(0, 2) = 60.0;
        CHECK(cross_entropy_value(logits, {2}, {1}) < 1e-12);
    }
    SUBCASE("matches literal -log softmax") {
        Prng rng(601);
        Tensor64 logits = rand_tensor(rng, {4, 9}, -3, 3);
        Tensor64 sm = softmax_rows(logits);
        std::vector<int> targets{1, 4, 0, 8};
        std::vector<std::uint8_t> mask{1, 0, 1, 1};
        double expect =
            (-std::log(sm.at(0, 1)) - std::log(sm.at(2, 0)) - std::log(sm.at(3, 8))) / 3.0;
        CHECK(cross_entropy_value(logits, targets, mask) ==
              doctest::Approx(expect).epsilon(1e-10));
    }
    SUBCASE("empty mask rejected") {
        Tensor64 logits({2, 4});
        CHECK_THROWS_AS(cross_entropy_value(logits, {0, 1}, {0, 0}), ContractError);
    }
}

TEST_CASE("adam, overfit and determinism suites") {
    CHECK(check_training_pieces(602).pass);
    CHECK(check_training_overfit(603).pass);
    CHECK(check_training_determinism(604).pass);
}

TEST_CASE("smoke run: finite loss, near-uniform start") {
    ModelConfig mc;
    mc.layers = 1;
    mc.d_model = 16;
    mc.heads = 2;
    mc.vocab_size = 8;
    mc.chunk_len = 4;
    mc.max_positions = 32;
    mc.stabilized = true;
    mc.seed = 3;
    TrainConfig tc;
    tc.steps = 200;
    tc.batch_size = 4;
    tc.seq_len = 8;
    tc.eval_interval = 10;
    tc.seed = 3;
    TrainResult res = train(mc, tc);
    REQUIRE(!res.metrics.empty());
    for (const auto& m : res.metrics) CHECK(std::isfinite(m.loss));
    CHECK(res.metrics.front().step == 0);
    CHECK(std::abs(res.metrics.front().loss - std::log(8.0)) < 0.15 * std::log(8.0));
    CHECK(res.metrics.back().loss < res.metrics.front().loss);
}

TEST_CASE("stacked batch graph matches per-row graphs") {
    ModelConfig mc;
    mc.layers = 2;
    mc.d_model = 16;
    mc.heads = 2;
    mc.vocab_size = 8;
    mc.chunk_len = 4;
    mc.max_positions = 32;
    mc.stabilized = true;
    mc.seed = 77;
    auto params = init_params<double>(mc);
    TaskBatch batch = make_copy_task(78, 3, 8, mc.vocab_size);
    std::size_t n = 8;
    std::size_t masked_total = 0;
    for (auto b : batch.mask) masked_total += b ? 1 : 0;

    // per-row construction
    Tape ref;
    BoundParams ref_bound = bind_params(ref, params, mc);
    int ref_loss = -1;
    for (std::size_t r = 0; r < 3; ++r) {
        int logits = model_logits_tape(ref, ref_bound, batch.inputs.row(r));
        auto mask = batch.mask_row(r);
        std::size_t mr = 0;
        for (auto b : mask) mr += b ? 1 : 0;
        int term = ref.scale(ref.cross_entropy(logits, batch.targets.row(r), mask),
                             double(mr) / double(masked_total));
        ref_loss = ref_loss < 0 ? term : ref.add(ref_loss, term);
    }
    auto ref_grads = collect_param_grads(ref, ref_bound, backward(ref, ref_loss));

    // stacked construction
    std::vector<int> tokens = batch.inputs.ids;
    std::vector<int> targets = batch.targets.ids;
    Tape tape;
    BoundParams bound = bind_params(tape, params, mc);
    BatchGraph graph = model_batch_tape(tape, bound, tokens, n, targets, batch.mask, 1.0);
    auto grads = collect_param_grads(tape, bound, backward(tape, graph.loss));

    CHECK(tape.replay_matches());
    CHECK(tape.value(graph.loss)[0] ==
          doctest::Approx(ref.value(ref_loss)[0]).epsilon(1e-12));
    REQUIRE(grads.size() == ref_grads.size());
    double worst = 0;
    for (std::size_t i = 0; i < grads.size(); ++i)
        worst = std::max(worst, test_helpers::max_abs_diff(grads[i], ref_grads[i]));
    CHECK(worst <= 1e-10);
}

TEST_CASE("threaded batches reduce deterministically") {
    ModelConfig mc;
    mc.layers = 1;
    mc.d_model = 16;
    mc.heads = 2;
    mc.vocab_size = 8;
    mc.chunk_len = 4;
    mc.max_positions = 32;
    mc.stabilized = true;
    mc.seed = 5;
    TrainConfig tc;
    tc.steps = 4;
    tc.batch_size = 6;
    tc.seq_len = 8;
    tc.eval_interval = 1;
    tc.seed = 5;
    tc.threads = 2;
    TrainResult a = train(mc, tc);
    TrainResult b = train(mc, tc);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].loss == b.metrics[i].loss);
        CHECK(a.metrics[i].accuracy == b.metrics[i].accuracy);
    }
    // and the threaded batch loss agrees with the single-threaded one
    TrainConfig tc1 = tc;
    tc1.threads = 1;
    TrainResult c = train(mc, tc1);
    for (std::size_t i = 0; i < a.metrics.size(); ++i)
        CHECK(a.metrics[i].loss == doctest::Approx(c.metrics[i].loss).epsilon(1e-12));
}
