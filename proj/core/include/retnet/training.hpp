// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "retnet/model.hpp"
#include "retnet/tensor.hpp"

// Toy-scale supervised training on synthetic sequence tasks. The whole loop
// is deterministic given (seed, single thread): batches come from the seeded
// generator, the forward pass runs the parallel retention form on a tape,
// gradients accumulate in batch-row order.
namespace retnet {

enum class Task { kCopy, kAssociativeRecall };

struct TrainConfig {
    Task task = Task::kCopy;
    std::size_t steps = 2000;
    std::size_t batch_size = 16;
    double learning_rate = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    std::size_t eval_interval = 50;
    std::size_t seq_len = 64;
    // batch rows are split across this many workers, each with its own tape;
    // gradients reduce in worker order, so a fixed count reproduces exactly
    std::size_t threads = 1;

    void validate() const {
        if (steps < 1 || batch_size < 1 || eval_interval < 1 || seq_len < 2 || threads < 1)
            throw ParameterError("train config: counts must be positive");
        if (!(learning_rate > 0)) throw ParameterError("train config: lr must be > 0");
    }
};

struct TokenMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<int> ids;

    int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
    int& at(std::size_t r, std::size_t c) { return ids[r * cols + c]; }
    std::vector<int> row(std::size_t r) const {
        return std::vector<int>(ids.begin() + static_cast<long>(r * cols),
                                ids.begin() + static_cast<long>((r + 1) * cols));
    }
};

struct TaskBatch {
    TokenMatrix inputs;
    TokenMatrix targets;
    std::vector<std::uint8_t> mask;  // [rows * cols], 1 where the loss counts

    std::vector<std::uint8_t> mask_row(std::size_t r) const {
        return std::vector<std::uint8_t>(mask.begin() + static_cast<long>(r * inputs.cols),
                                         mask.begin() + static_cast<long>((r + 1) * inputs.cols));
    }
};

/// Copy task: first half random ids from [1, vocab), separator id 0, then the
/// first half replayed (teacher forcing). Targets' second half equals the
/// inputs' first half; the loss mask covers the n/2 - 1 positions after the
/// separator.
TaskBatch make_copy_task(std::uint64_t seed, std::size_t batch, std::size_t n,
                         std::size_t vocab);

/// Associative recall: (key, value) pairs followed by a query key; only the
/// final position (the value to recall) is masked in. n must be odd; keys and
/// values come from disjoint id ranges.
TaskBatch make_recall_task(std::uint64_t seed, std::size_t batch, std::size_t n,
                           std::size_t vocab);

TaskBatch make_task(Task task, std::uint64_t seed, std::size_t batch, std::size_t n,
                    std::size_t vocab);

/// Adam first/second moments, one pair per parameter tensor (visit order).
struct AdamState {
    std::vector<Tensor64> m, v;
    long t = 0;
};

AdamState make_adam_state(const ModelParams64& params);

/// One Adam update with bias correction; params and grads follow visit order.
void adam_step(ModelParams64& params, const std::vector<Tensor64>& grads, AdamState& state,
               const TrainConfig& cfg);

struct MetricsRow {
    std::size_t step;
    double loss;
    double accuracy;
};

struct TrainResult {
    ModelParams64 params;
    std::vector<MetricsRow> metrics;
};

/// Batch loss/accuracy of the parallel forward at the given parameters
/// (no gradients). Accuracy is greedy argmax agreement on masked positions.
std::pair<double, double> evaluate_batch(const ModelParams64& params, const ModelConfig& cfg,
                                         const TaskBatch& batch);

/// Full loop: batch -> parallel-mode tape forward -> cross entropy ->
/// backward -> adam. Metrics (pre-update) are logged every eval_interval
/// steps and at the last step; on_metrics, when set, sees each row as it is
/// produced. Throws NumericError if the loss goes non-finite.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::function<void(const MetricsRow&)>& on_metrics = {});

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

} // namespace retnet
