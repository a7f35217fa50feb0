// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "retnet/autodiff.hpp"
#include "retnet/model.hpp"

// Builds the RetNet forward pass on a Tape (parallel retention form) so the
// model can be trained. The leaf binding follows visit_params order, so
// gradients map straight back onto ModelParams.
namespace retnet {

struct BoundParams {
    std::vector<std::pair<std::string, int>> ordered;  // visit_params order
    ModelConfig cfg;

    int id(const std::string& name) const;
};

/// One requires_grad leaf per parameter tensor. gammas/theta follow the
/// trainable flags in the config.
BoundParams bind_params(Tape& tape, const ModelParams64& params, const ModelConfig& cfg);

/// Gated MSR layer for one block; x is the (already normalized) input node.
/// x may stack several equal-length sequences row-wise; seq_len tells the
/// layer where the sequence boundaries fall.
int msr_tape(Tape& tape, const BoundParams& bound, std::size_t layer, int x,
             std::size_t seq_len);

int block_tape(Tape& tape, const BoundParams& bound, std::size_t layer, int x,
               std::size_t seq_len);

/// Embedding -> blocks -> optional final norm -> tied head, one sequence.
int model_logits_tape(Tape& tape, const BoundParams& bound, const std::vector<int>& tokens);

/// Whole-batch graph over sequences of equal length stacked row-wise:
/// logits [rows*seq_len x vocab] and the cross-entropy loss over the flat
/// mask, scaled by loss_scale.
struct BatchGraph {
    int logits = -1;
    int loss = -1;
};
BatchGraph model_batch_tape(Tape& tape, const BoundParams& bound,
                            const std::vector<int>& tokens, std::size_t seq_len,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask, double loss_scale);

/// Copies gradients (tape order) back into visit_params order; frozen
/// parameters come back as zeros.
std::vector<Tensor64> collect_param_grads(const Tape& tape, const BoundParams& bound,
                                          const std::vector<Tensor64>& node_grads);

} // namespace retnet
