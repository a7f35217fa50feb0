// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <limits>

#include "retnet/prng.hpp"
#include "retnet/tensor.hpp"

namespace test_helpers {

inline retnet::Tensor64 rand_tensor(retnet::Prng& rng, std::vector<std::size_t> shape,
                                    double lo = -1.0, double hi = 1.0) {
    retnet::Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline double max_abs_diff(const retnet::Tensor64& a, const retnet::Tensor64& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bits_equal(const retnet::Tensor64& a, const retnet::Tensor64& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace test_helpers
