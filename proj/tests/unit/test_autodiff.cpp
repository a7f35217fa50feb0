// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"
#include "retnet/autodiff.hpp"
#include "retnet/ops.hpp"
#include "retnet/verify.hpp"

using namespace retnet;
using test_helpers::bits_equal;
using test_helpers::rand_tensor;

TEST_CASE("recording") {
    Prng rng(201);
    Tape tape;
    Tensor64 eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    Tensor64 b = rand_tensor(rng, {2, 2});
    int r = tape.matmul(tape.leaf(eye), tape.leaf(b));
    CHECK(bits_equal(tape.value(r), b));

    std::size_t before = tape.size();
    int c = tape.swish(r);
    c = tape.scale(c, 0.5);
    tape.sum(c);
    CHECK(tape.size() == before + 3);

    CHECK(tape.replay_matches());
    CHECK_THROWS_AS(tape.matmul(r, 999), ContractError);
}

TEST_CASE("backward basics") {
    Prng rng(202);
    Tensor64 x = rand_tensor(rng, {3, 4});
    SUBCASE("sum gives ones") {
        Tape tape;
        int xl = tape.leaf(x, true);
        auto grads = backward(tape, tape.sum(xl));
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(grads[0][i] == 1.0);
    }
    SUBCASE("sum of x*x gives 2x") {
        Tape tape;
        int xl = tape.leaf(x, true);
        auto grads = backward(tape, tape.sum(tape.hadamard(xl, xl)));
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(grads[0][i] == doctest::Approx(2.0 * x[i]).epsilon(1e-12));
    }
    SUBCASE("non-scalar loss rejected") {
        Tape tape;
        int xl = tape.leaf(x, true);
        CHECK_THROWS_AS(backward(tape, xl), ContractError);
    }
    SUBCASE("unreachable leaves get zeros") {
        Tape tape;
        int xl = tape.leaf(x, true);
        int orphan = tape.leaf(rand_tensor(rng, {2}), true);
        auto grads = backward(tape, tape.sum(xl));
        REQUIRE(!grads[static_cast<std::size_t>(orphan)].empty());
        CHECK(grads[static_cast<std::size_t>(orphan)][0] == 0.0);
        CHECK(grads[static_cast<std::size_t>(orphan)][1] == 0.0);
    }
}

TEST_CASE("finite difference oracle") {
    SUBCASE("p squared") {
        auto f = [](const std::vector<Tensor64>& p) { return p[0][0] * p[0][0]; };
        std::vector<Tensor64> params{Tensor64::scalar(1.0)};
        std::vector<Tensor64> analytic{Tensor64::scalar(2.0)};
        CHECK(finite_diff_check(f, params, analytic) <= 1e-9);
    }
    SUBCASE("constant function") {
        auto f = [](const std::vector<Tensor64>&) { return 4.25; };
        std::vector<Tensor64> params{Tensor64::scalar(0.3)};
        std::vector<Tensor64> analytic{Tensor64::scalar(0.0)};
        CHECK(finite_diff_check(f, params, analytic) == 0.0);
    }
    SUBCASE("bad step rejected") {
        auto f = [](const std::vector<Tensor64>&) { return 0.0; };
        CHECK_THROWS_AS(finite_diff_check(f, {Tensor64::scalar(0.0)},
                                          {Tensor64::scalar(0.0)}, 0.0),
                        ParameterError);
    }
    SUBCASE("non-finite evaluation rejected") {
        auto f = [](const std::vector<Tensor64>& p) { return 1.0 / (p[0][0] - p[0][0]); };
        CHECK_THROWS_AS(finite_diff_check(f, {Tensor64::scalar(1.0)},
                                          {Tensor64::scalar(0.0)}),
                        NumericError);
    }
}

TEST_CASE("per-primitive gradients vs central differences") {
    CHECK(check_primitive_gradients(203).pass);
}

TEST_CASE("whole-model gradient check") {
    CHECK(check_model_gradient(204).pass);
}

TEST_CASE("tape invariant suite") {
    CHECK(check_tape_basics(205).pass);
}
