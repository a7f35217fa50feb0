// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "retnet/tensor.hpp"

// Tape-based reverse-mode differentiation over the numerics primitives, in
// double precision. Recording an op appends a node holding the computed
// value; backward() walks the tape in reverse with a fixed accumulation
// order, so gradients are deterministic. Only the parallel retention form is
// differentiable; the recurrent and chunkwise forms are inference paths.
namespace retnet {

enum class OpKind : std::uint8_t {
    kLeaf,
    kMatMul,
    kMatMulBT,   // a * b^T (tied output head)
    kHadamard,
    kAdd,
    kScale,
    kSwish,
    kGelu,
    kGroupNorm,  // inputs x, scale, shift; layer norm = 1 group
    kSoftmaxRows,
    kSum,
    kGatherRows,
    kConcatCols,
    kSliceCols,
    kConcatRows,
    kSliceRows,
    kCrossEntropy,
    kRetention,     // fused parallel retention; gamma frozen or a 4th input
    kRetentionSeq,  // same, over several equal-length sequences stacked row-wise
    kXPos,          // rotation at absolute positions; optionally cyclic for
                    // batches of stacked equal-length sequences
};

struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor64 value;
    bool requires_grad = false;

    // op attributes
    double scalar = 0.0;          // scale factor / eps / frozen gamma
    std::size_t a = 0, b = 0;     // groups, slice bounds, xpos start position
    std::size_t c = 0;            // xpos position period (0 = none)
    bool flag = false;            // retention stabilized / xpos conjugate
    std::shared_ptr<const std::vector<int>> ids;            // gather ids, CE targets
    std::shared_ptr<const std::vector<std::uint8_t>> mask;  // CE loss mask
    // forward by-products kept for the backward pass (retention scores)
    std::shared_ptr<const std::vector<double>> stash;
};

class Tape {
public:
    int leaf(Tensor64 value, bool requires_grad = false);

    int matmul(int a, int b);
    int matmul_bt(int a, int b);
    int hadamard(int a, int b);
    int add(int a, int b);
    int scale(int a, double s);
    int swish(int a);
    int gelu(int a);
    int group_norm(int x, int scl, int shift, std::size_t groups, double eps);
    int layer_norm(int x, int scl, int shift, double eps);
    int softmax_rows(int a);
    int sum(int a);
    int gather_rows(int table, std::vector<int> ids);
    int concat_cols(const std::vector<int>& parts);
    int slice_cols(int a, std::size_t c0, std::size_t c1);
    int concat_rows(const std::vector<int>& parts);
    int slice_rows(int a, std::size_t r0, std::size_t r1);
    int cross_entropy(int logits, std::vector<int> targets, std::vector<std::uint8_t> mask);
    int retention(int q, int k, int v, double gamma, bool stabilized);
    int retention(int q, int k, int v, int gamma_node, bool stabilized);
    /// Parallel retention applied independently to each seq_len-row block of
    /// the stacked inputs; one node covers a whole batch for one head.
    int retention_seq(int q, int k, int v, double gamma, bool stabilized,
                      std::size_t seq_len);
    int retention_seq(int q, int k, int v, int gamma_node, bool stabilized,
                      std::size_t seq_len);
    int xpos(int x, int theta, std::size_t start, bool conjugate, std::size_t period = 0);

    const Tensor64& value(int id) const { return nodes_[check(id)].value; }
    const Node& node(int id) const { return nodes_[check(id)]; }
    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Recomputes every non-leaf value from the leaves; true iff every node
    /// reproduces bit-identically.
    bool replay_matches() const;

private:
    int push(Node n);
    int check(int id) const;
    std::vector<Node> nodes_;
};

/// Gradients of a scalar loss node with respect to every node, by reverse
/// traversal. Entries for nodes that need no gradient stay empty; leaves
/// with requires_grad that the loss never reaches come back as zeros.
std::vector<Tensor64> backward(const Tape& tape, int loss);

/// Standalone numerically-stable cross entropy: mean over masked positions
/// of -log softmax(logits)[target].
double cross_entropy_value(const Tensor64& logits, const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& mask);

/// Central-difference oracle: compares the supplied analytic gradients
/// against (f(p+h) - f(p-h)) / 2h per coordinate and returns the maximum
/// relative error, with max(|analytic|, |numeric|, 1e-8) in the denominator.
double finite_diff_check(const std::function<double(const std::vector<Tensor64>&)>& f,
                         const std::vector<Tensor64>& params,
                         const std::vector<Tensor64>& analytic_grads, double step = 1e-5);

} // namespace retnet
