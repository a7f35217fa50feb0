// SPDX-License-Identifier: Apache-2.0
//
// retnet command-line entry point.
//
//   verify     run the full equivalence/invariant suite (exit 0 iff all pass)
//   gradcheck  finite-difference gradient verification
//   train      train on a synthetic task, write metrics and a checkpoint
//   generate   continue a prompt from a checkpoint in any execution mode
//   bench      decode-scaling benchmark, retention vs. attention baseline
//
// Exit codes: 0 success, 1 verification/numeric failure, 2 usage or IO error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "retnet/attention.hpp"
#include "retnet/bench.hpp"
#include "retnet/checkpoint.hpp"
#include "retnet/config.hpp"
#include "retnet/model.hpp"
#include "retnet/prng.hpp"
#include "retnet/training.hpp"
#include "retnet/verify.hpp"

namespace {

using namespace retnet;

int run_verify(std::uint64_t seed) {
    auto results = run_verification(seed);
    bool all = true;
    for (const auto& r : results) {
        std::printf("[%s] %-28s %s\n", r.pass ? " OK " : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all = all && r.pass;
    }
    std::printf("%zu checks, %s\n", results.size(), all ? "all passed" : "FAILURES above");
    return all ? 0 : 1;
}

int run_gradcheck(std::uint64_t seed) {
    CheckResult prim = check_primitive_gradients(seed);
    CheckResult model = check_model_gradient(seed + 1);
    for (const auto& r : {prim, model})
        std::printf("[%s] %-28s %s\n", r.pass ? " OK " : "FAIL", r.name.c_str(),
                    r.detail.c_str());
    return prim.pass && model.pass ? 0 : 1;
}

int run_train(const std::string& config_path, const std::string& out_path,
              const std::string& metrics_path) {
    Configs cfg = config_path.empty() ? Configs{} : load_config(config_path);
    std::printf("training task=%s steps=%zu batch=%zu seq_len=%zu lr=%g seed=%llu\n",
                cfg.train.task == Task::kCopy ? "copy" : "associative-recall",
                cfg.train.steps, cfg.train.batch_size, cfg.train.seq_len,
                cfg.train.learning_rate, static_cast<unsigned long long>(cfg.train.seed));
    TrainResult result = train(cfg.model, cfg.train, [](const MetricsRow& m) {
        std::printf("step %6zu  loss %.5f  accuracy %.4f\n", m.step, m.loss, m.accuracy);
        std::fflush(stdout);
    });
    if (!metrics_path.empty()) {
        write_metrics_csv(metrics_path, result.metrics);
        std::printf("metrics written to %s\n", metrics_path.c_str());
    }
    if (!out_path.empty()) {
        save_checkpoint(result.params, cfg.model, out_path);
        std::printf("checkpoint written to %s\n", out_path.c_str());
    }
    return 0;
}

std::vector<int> parse_prompt(const std::string& prompt) {
    std::vector<int> ids;
    std::string cur;
    for (char c : prompt) {
        if (c == ',') {
            if (!cur.empty()) ids.push_back(std::stoi(cur));
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) ids.push_back(std::stoi(cur));
    if (ids.empty()) throw InputError("generate: empty prompt");
    return ids;
}

int pick_token(const Tensor64& logits, bool sample, Prng& rng) {
    if (!sample) return argmax_token(logits);
    Tensor64 row({1, logits.size()});
    std::copy(logits.data(), logits.data() + logits.size(), row.data());
    Tensor64 probs = softmax_rows(row);
    double u = rng.uniform();
    double acc = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

int run_generate(const std::string& ckpt_path, const std::string& prompt, std::size_t steps,
                 const std::string& mode_name, bool sample, std::uint64_t sample_seed) {
    auto [params, cfg] = load_checkpoint<double>(ckpt_path);
    std::vector<int> tokens = parse_prompt(prompt);
    check_tokens(tokens, cfg);
    if (tokens.size() + steps > cfg.max_positions)
        throw InputError("generate: prompt plus steps exceeds max_positions");

    ExecMode mode = ExecMode::kRecurrent;
    if (mode_name == "parallel") mode = ExecMode::kParallel;
    else if (mode_name == "chunkwise") mode = ExecMode::kChunkwise;
    else if (mode_name != "recurrent")
        throw InputError("generate: mode must be parallel, recurrent or chunkwise");

    Prng rng(sample_seed);
    std::vector<int> generated;
    if (mode == ExecMode::kParallel) {
        // full forward per token; the state-free form exists for training,
        // not decoding, and the cost shows
        std::vector<int> all = tokens;
        for (std::size_t s = 0; s < steps; ++s) {
            Tensor64 logits = lm_forward(all, params, cfg, ExecMode::kParallel);
            Tensor64 last({cfg.vocab_size});
            std::copy(logits.row(logits.rows() - 1),
                      logits.row(logits.rows() - 1) + cfg.vocab_size, last.data());
            int next = pick_token(last, sample, rng);
            generated.push_back(next);
            all.push_back(next);
        }
    } else {
        // prefill the prompt in the requested mode, then decode recurrently
        DecodeState<double> state = make_decode_state<double>(cfg);
        Tensor64 x = gather_rows(params.embedding, tokens);
        for (std::size_t l = 0; l < params.blocks.size(); ++l)
            x = block_forward(x, params.blocks[l], mode, &state.layers[l], cfg.chunk_len,
                              cfg.stabilized);
        if (cfg.final_norm)
            x = layer_norm(x, kLayerNormEps, params.final_scale, params.final_shift);
        state.position = tokens.size();
        Tensor64 logits = scale(matmul_bt(x, params.embedding), output_head_scale(cfg));
        Tensor64 last({cfg.vocab_size});
        std::copy(logits.row(logits.rows() - 1),
                  logits.row(logits.rows() - 1) + cfg.vocab_size, last.data());
        for (std::size_t s = 0; s < steps; ++s) {
            int next = pick_token(last, sample, rng);
            generated.push_back(next);
            if (s + 1 < steps) last = decode_step(state, next, params, cfg);
        }
    }
    for (std::size_t i = 0; i < generated.size(); ++i)
        std::printf("%s%d", i ? "," : "", generated[i]);
    std::printf("\n");
    return 0;
}

int run_bench(const std::string& mechanism, const std::vector<std::size_t>& lens,
              const std::string& csv_path, const std::string& config_path,
              const std::string& precision_name) {
    Mechanism which = Mechanism::kBoth;
    if (mechanism == "retention") which = Mechanism::kRetention;
    else if (mechanism == "attention") which = Mechanism::kAttention;
    else if (mechanism != "both")
        throw InputError("bench: mechanism must be retention, attention or both");
    Precision prec = Precision::kF32;
    if (precision_name == "f64") prec = Precision::kF64;
    else if (precision_name != "f32")
        throw InputError("bench: precision must be f32 or f64");

    ModelConfig cfg =
        config_path.empty() ? reference_bench_config() : load_config(config_path).model;
    std::printf("bench config: L=%zu d_model=%zu heads=%zu precision=%s threads=1\n",
                cfg.layers, cfg.d_model, cfg.heads, precision_name.c_str());
    auto records = bench_decode(cfg, lens, which, prec);
    std::printf("%-10s %-9s %8s %12s %14s %12s %10s\n", "mechanism", "mode", "seq_len",
                "wall_ms", "tokens_per_s", "state_bytes", "tail_ms/t");
    for (const auto& r : records)
        std::printf("%-10s %-9s %8zu %12.2f %14.1f %12zu %10.4f\n", r.mechanism.c_str(),
                    r.mode.c_str(), r.seq_len, r.wall_ms, r.tokens_per_s, r.state_bytes,
                    r.tail_ms_per_token);
    if (!csv_path.empty()) {
        write_bench_csv(csv_path, records, 1, prec);
        std::printf("csv written to %s\n", csv_path.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"retnet: retention-based sequence model toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 2024;

    auto* verify_cmd = app.add_subcommand("verify", "run the verification suite");
    verify_cmd->add_option("--seed", seed, "verification seed");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    grad_cmd->add_option("--seed", seed, "gradcheck seed");

    std::string config_path, out_path, metrics_path;
    auto* train_cmd = app.add_subcommand("train", "train on a synthetic task");
    train_cmd->add_option("--config", config_path, "config file (key = value lines)");
    train_cmd->add_option("--out", out_path, "checkpoint output path");
    train_cmd->add_option("--metrics", metrics_path, "metrics CSV output path");

    std::string ckpt_path, prompt = "1", mode_name = "recurrent";
    std::size_t gen_steps = 32;
    bool sample = false;
    std::uint64_t sample_seed = 0;
    auto* gen_cmd = app.add_subcommand("generate", "continue a prompt from a checkpoint");
    gen_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    gen_cmd->add_option("--prompt", prompt, "comma-separated token ids");
    gen_cmd->add_option("--steps", gen_steps, "tokens to generate");
    gen_cmd->add_option("--mode", mode_name, "parallel | recurrent | chunkwise");
    gen_cmd->add_flag("--sample", sample, "temperature-1 sampling instead of greedy");
    gen_cmd->add_option("--sample-seed", sample_seed, "sampling seed");

    std::string mechanism = "both", bench_csv, bench_config, precision = "f32";
    std::vector<std::size_t> lens{512, 1024, 2048, 4096};
    auto* bench_cmd = app.add_subcommand("bench", "decode-scaling benchmark");
    bench_cmd->add_option("--mechanism", mechanism, "retention | attention | both");
    bench_cmd->add_option("--lens", lens, "sequence lengths")->delimiter(',');
    bench_cmd->add_option("--csv", bench_csv, "CSV output path");
    bench_cmd->add_option("--config", bench_config, "model config file");
    bench_cmd->add_option("--precision", precision, "f32 | f64");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (verify_cmd->parsed()) return run_verify(seed);
        if (grad_cmd->parsed()) return run_gradcheck(seed);
        if (train_cmd->parsed()) return run_train(config_path, out_path, metrics_path);
        if (gen_cmd->parsed())
            return run_generate(ckpt_path, prompt, gen_steps, mode_name, sample, sample_seed);
        if (bench_cmd->parsed())
            return run_bench(mechanism, lens, bench_csv, bench_config, precision);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
