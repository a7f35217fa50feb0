// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace retnet {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Every invariant suite in one place; `verify` runs them all and the
// acceptance tests reuse the individual checks at their pinned settings.
CheckResult check_matmul_oracle(std::uint64_t seed);
CheckResult check_groupnorm_stats(std::uint64_t seed);       // acceptance A7
CheckResult check_softmax_invariants(std::uint64_t seed);
CheckResult check_activation_monotonicity();
CheckResult check_tape_basics(std::uint64_t seed);
CheckResult check_primitive_gradients(std::uint64_t seed);   // acceptance A3 (primitives)
CheckResult check_model_gradient(std::uint64_t seed);        // acceptance A3 (whole model)
CheckResult check_decay_mask_properties();
CheckResult check_xpos_identities(std::uint64_t seed);
CheckResult check_retention_forms(std::uint64_t seed);
CheckResult check_retention_causality(std::uint64_t seed);
CheckResult check_retention_streaming(std::uint64_t seed);
CheckResult check_msr_layer(std::uint64_t seed);
CheckResult check_msr_head_symmetry(std::uint64_t seed);
CheckResult check_model_three_forms(std::uint64_t seed);     // acceptance A1
CheckResult check_decode_equivalence(std::uint64_t seed);    // acceptance A2
CheckResult check_causality_bitwise(std::uint64_t seed);     // acceptance A6
CheckResult check_decode_state_size(std::uint64_t seed);
CheckResult check_checkpoint_roundtrip(std::uint64_t seed);  // acceptance A8
CheckResult check_attention_baseline(std::uint64_t seed);
CheckResult check_training_pieces(std::uint64_t seed);
CheckResult check_training_overfit(std::uint64_t seed);
CheckResult check_training_determinism(std::uint64_t seed);

std::vector<CheckResult> run_verification(std::uint64_t seed);

} // namespace retnet
