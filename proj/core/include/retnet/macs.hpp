// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace retnet {

// Machine-independent work proxy: every linear-algebra kernel (matmul, dot,
// outer product, recurrent state update) adds one count per scalar multiply.
// Elementwise activations, normalizations and rotations are not counted.
namespace macs {

inline thread_local std::uint64_t counter = 0;

inline void add(std::uint64_t n) { counter += n; }
inline void reset() { counter = 0; }
inline std::uint64_t total() { return counter; }

} // namespace macs

} // namespace retnet
