// SPDX-License-Identifier: Apache-2.0
#include "retnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "retnet/autodiff.hpp"
#include "retnet/model_tape.hpp"
#include "retnet/prng.hpp"

namespace retnet {

TaskBatch make_copy_task(std::uint64_t seed, std::size_t batch, std::size_t n,
                         std::size_t vocab) {
    if (n < 4 || n % 2 != 0) throw ParameterError("copy task: n must be even and >= 4");
    if (vocab < 4) throw ParameterError("copy task: vocab must be >= 4 (id 0 is the separator)");
    if (batch < 1) throw ParameterError("copy task: batch must be >= 1");
    Prng rng(seed);
    std::size_t half = n / 2;
    TaskBatch b;
    b.inputs = {batch, n, std::vector<int>(batch * n, 0)};
    b.targets = {batch, n, std::vector<int>(batch * n, 0)};
    b.mask.assign(batch * n, 0);
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < half; ++j)
            b.inputs.at(r, j) = 1 + static_cast<int>(rng.below(vocab - 1));
        b.inputs.at(r, half) = 0;  // separator
        for (std::size_t j = half + 1; j < n; ++j)
            b.inputs.at(r, j) = b.inputs.at(r, j - half - 1);
        for (std::size_t j = half; j < n; ++j)
            b.targets.at(r, j) = b.inputs.at(r, j - half);
        for (std::size_t j = half + 1; j < n; ++j) b.mask[r * n + j] = 1;
    }
    return b;
}

TaskBatch make_recall_task(std::uint64_t seed, std::size_t batch, std::size_t n,
                           std::size_t vocab) {
    if (n < 3 || n % 2 != 1) throw ParameterError("recall task: n must be odd and >= 3");
    if (vocab < 4) throw ParameterError("recall task: vocab must be >= 4");
    if (batch < 1) throw ParameterError("recall task: batch must be >= 1");
    std::size_t pairs = (n - 1) / 2;
    std::size_t key_lo = 1, key_hi = 1 + (vocab - 1) / 2;  // keys [1, key_hi)
    std::size_t val_lo = key_hi, val_hi = vocab;           // values [key_hi, vocab)
    if (pairs > key_hi - key_lo)
        throw ParameterError("recall task: not enough distinct keys for this n/vocab");
    Prng rng(seed);
    TaskBatch b;
    b.inputs = {batch, n, std::vector<int>(batch * n, 0)};
    b.targets = {batch, n, std::vector<int>(batch * n, 0)};
    b.mask.assign(batch * n, 0);
    std::vector<int> keys(key_hi - key_lo);
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = static_cast<int>(key_lo + i);
    for (std::size_t r = 0; r < batch; ++r) {
        // partial Fisher-Yates for distinct keys
        for (std::size_t i = 0; i < pairs; ++i) {
            std::size_t j = i + rng.below(keys.size() - i);
            std::swap(keys[i], keys[j]);
        }
        std::vector<int> vals(pairs);
        for (std::size_t i = 0; i < pairs; ++i)
            vals[i] = static_cast<int>(val_lo + rng.below(val_hi - val_lo));
        for (std::size_t i = 0; i < pairs; ++i) {
            b.inputs.at(r, 2 * i) = keys[i];
            b.inputs.at(r, 2 * i + 1) = vals[i];
        }
        std::size_t q = rng.below(pairs);
        b.inputs.at(r, n - 1) = keys[q];
        b.targets.at(r, n - 1) = vals[q];
        b.mask[r * n + (n - 1)] = 1;
    }
    return b;
}

TaskBatch make_task(Task task, std::uint64_t seed, std::size_t batch, std::size_t n,
                    std::size_t vocab) {
    return task == Task::kCopy ? make_copy_task(seed, batch, n, vocab)
                               : make_recall_task(seed, batch, n, vocab);
}

AdamState make_adam_state(const ModelParams64& params) {
    AdamState st;
    visit_params(params, [&](const std::string&, const Tensor64& t) {
        st.m.emplace_back(t.shape());
        st.v.emplace_back(t.shape());
    });
    return st;
}

void adam_step(ModelParams64& params, const std::vector<Tensor64>& grads, AdamState& state,
               const TrainConfig& cfg) {
    state.t += 1;
    double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    std::size_t idx = 0;
    visit_params(params, [&](const std::string& name, Tensor64& p) {
        if (idx >= grads.size()) throw ContractError("adam_step: gradient list too short");
        const Tensor64& g = grads[idx];
        Tensor64& m = state.m[idx];
        Tensor64& v = state.v[idx];
        if (!g.same_shape(p)) throw DimensionError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            double mhat = m[i] / c1;
            double vhat = v[i] / c2;
            p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        // learnable decays stay inside (0, 1)
        if (name.size() >= 6 && name.compare(name.size() - 6, 6, "gammas") == 0)
            for (std::size_t i = 0; i < p.size(); ++i)
                p[i] = std::min(std::max(p[i], 1.0 / 64.0), 1.0 - 0x1.0p-20);
        ++idx;
    });
    if (idx != grads.size()) throw ContractError("adam_step: gradient list too long");
}

namespace {

double masked_accuracy(const Tensor64& logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask, std::size_t& hits,
                       std::size_t& total) {
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (!mask[i]) continue;
        const double* row = logits.row(i);
        int best = 0;
        double bv = row[0];
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (row[j] > bv) {
                bv = row[j];
                best = static_cast<int>(j);
            }
        hits += (best == targets[i]) ? 1 : 0;
        ++total;
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

} // namespace

std::pair<double, double> evaluate_batch(const ModelParams64& params, const ModelConfig& cfg,
                                         const TaskBatch& batch) {
    double loss_sum = 0.0;
    std::size_t masked_total = 0, hits = 0, total = 0;
    for (std::size_t r = 0; r < batch.inputs.rows; ++r) {
        auto tokens = batch.inputs.row(r);
        auto targets = batch.targets.row(r);
        auto mask = batch.mask_row(r);
        Tensor64 logits = lm_forward(tokens, params, cfg, ExecMode::kParallel);
        std::size_t mr = 0;
        for (auto b : mask) mr += b ? 1 : 0;
        loss_sum += cross_entropy_value(logits, targets, mask) * static_cast<double>(mr);
        masked_total += mr;
        masked_accuracy(logits, targets, mask, hits, total);
    }
    double loss = loss_sum / static_cast<double>(masked_total);
    double acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    return {loss, acc};
}

namespace {

struct WorkerOut {
    std::vector<Tensor64> grads;  // visit order, already weighted
    double loss = 0.0;            // weighted contribution to the batch loss
    std::size_t hits = 0, total = 0;
    std::exception_ptr error;
};

// rows per stacked tape: enough to amortize per-op overhead, small enough
// that the activations stay cache-resident
constexpr std::size_t kRowsPerTape = 16;

// forward/backward over rows [r0, r1), in stacked sub-blocks
void run_rows(const ModelParams64& params, const ModelConfig& model_cfg,
              const TaskBatch& batch, std::size_t r0, std::size_t r1,
              std::size_t masked_total, WorkerOut& out) {
    try {
        std::size_t n = batch.inputs.cols;
        for (std::size_t b0 = r0; b0 < r1; b0 += kRowsPerTape) {
            std::size_t b1 = std::min(r1, b0 + kRowsPerTape);
            std::vector<int> tokens, targets;
            std::vector<std::uint8_t> mask;
            tokens.reserve((b1 - b0) * n);
            targets.reserve((b1 - b0) * n);
            mask.reserve((b1 - b0) * n);
            for (std::size_t r = b0; r < b1; ++r) {
                auto trow = batch.inputs.row(r);
                auto grow = batch.targets.row(r);
                auto mrow = batch.mask_row(r);
                tokens.insert(tokens.end(), trow.begin(), trow.end());
                targets.insert(targets.end(), grow.begin(), grow.end());
                mask.insert(mask.end(), mrow.begin(), mrow.end());
            }
            std::size_t mine = 0;
            for (auto b : mask) mine += b ? 1 : 0;

            Tape tape;
            BoundParams bound = bind_params(tape, params, model_cfg);
            BatchGraph graph = model_batch_tape(tape, bound, tokens, n, targets, mask,
                                                static_cast<double>(mine) /
                                                    static_cast<double>(masked_total));
            masked_accuracy(tape.value(graph.logits), targets, mask, out.hits, out.total);
            out.loss += tape.value(graph.loss)[0];
            auto grads = collect_param_grads(tape, bound, backward(tape, graph.loss));
            if (out.grads.empty()) {
                out.grads = std::move(grads);
            } else {
                for (std::size_t t = 0; t < grads.size(); ++t)
                    for (std::size_t i = 0; i < grads[t].size(); ++i)
                        out.grads[t][i] += grads[t][i];
            }
        }
    } catch (...) {
        out.error = std::current_exception();
    }
}

} // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::function<void(const MetricsRow&)>& on_metrics) {
    model_cfg.validate();
    train_cfg.validate();
    TrainResult result;
    result.params = init_params<double>(model_cfg);
    AdamState adam = make_adam_state(result.params);
    std::size_t workers = std::min(train_cfg.threads, train_cfg.batch_size);

    for (std::size_t step = 0; step < train_cfg.steps; ++step) {
        TaskBatch batch =
            make_task(train_cfg.task, Prng::derive(train_cfg.seed, 1000 + step),
                      train_cfg.batch_size, train_cfg.seq_len, model_cfg.vocab_size);
        std::size_t masked_total = 0;
        for (auto b : batch.mask) masked_total += b ? 1 : 0;

        std::vector<WorkerOut> outs(workers);
        std::size_t rows = batch.inputs.rows;
        std::size_t per = (rows + workers - 1) / workers;
        if (workers == 1) {
            run_rows(result.params, model_cfg, batch, 0, rows, masked_total, outs[0]);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                std::size_t r0 = std::min(rows, w * per), r1 = std::min(rows, (w + 1) * per);
                pool.emplace_back(run_rows, std::cref(result.params), std::cref(model_cfg),
                                  std::cref(batch), r0, r1, masked_total, std::ref(outs[w]));
            }
            for (auto& t : pool) t.join();
        }
        for (auto& o : outs)
            if (o.error) std::rethrow_exception(o.error);

        // reduce in worker order so a fixed thread count reproduces exactly
        double loss_value = 0.0;
        std::size_t hits = 0, total = 0;
        for (const auto& o : outs) {
            loss_value += o.loss;
            hits += o.hits;
            total += o.total;
        }
        std::vector<Tensor64> grads = std::move(outs[0].grads);
        for (std::size_t w = 1; w < workers; ++w)
            for (std::size_t t = 0; t < grads.size(); ++t)
                for (std::size_t i = 0; i < grads[t].size(); ++i)
                    grads[t][i] += outs[w].grads[t][i];

        if (!std::isfinite(loss_value))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));

        if (step % train_cfg.eval_interval == 0 || step + 1 == train_cfg.steps) {
            double acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
            result.metrics.push_back({step, loss_value, acc});
            if (on_metrics) on_metrics(result.metrics.back());
        }

        adam_step(result.params, grads, adam, train_cfg);
    }
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("metrics: cannot open " + path + " for writing");
    out << "step,loss,accuracy\n";
    for (const auto& r : rows)
        out << r.step << "," << r.loss << "," << r.accuracy << "\n";
}

} // namespace retnet
