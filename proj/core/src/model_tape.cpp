// SPDX-License-Identifier: Apache-2.0
#include "retnet/model_tape.hpp"

namespace retnet {

int BoundParams::id(const std::string& name) const {
    for (const auto& [n, i] : ordered)
        if (n == name) return i;
    throw ContractError("bound params: no tensor named " + name);
}

BoundParams bind_params(Tape& tape, const ModelParams64& params, const ModelConfig& cfg) {
    cfg.validate();
    BoundParams bound;
    bound.cfg = cfg;
    visit_params(params, [&](const std::string& name, const Tensor64& t) {
        bool grad = true;
        if (name.size() >= 6 && name.substr(name.size() - 6) == "gammas")
            grad = cfg.trainable_gamma;
        if (name.size() >= 5 && name.substr(name.size() - 5) == "theta")
            grad = cfg.trainable_theta;
        bound.ordered.emplace_back(name, tape.leaf(t, grad));
    });
    return bound;
}

int msr_tape(Tape& tape, const BoundParams& bound, std::size_t layer, int x,
             std::size_t seq_len) {
    const ModelConfig& cfg = bound.cfg;
    std::string pre = "block" + std::to_string(layer) + ".";
    int wq = bound.id(pre + "wq"), wk = bound.id(pre + "wk"), wv = bound.id(pre + "wv");
    int wg = bound.id(pre + "wg"), wo = bound.id(pre + "wo");
    int gn_scale = bound.id(pre + "gn.scale"), gn_shift = bound.id(pre + "gn.shift");
    int gammas = bound.id(pre + "gammas"), theta = bound.id(pre + "theta");

    std::size_t rows = tape.value(x).rows();
    if (seq_len == 0 || rows % seq_len != 0)
        throw ContractError("msr_tape: rows are not a multiple of seq_len");
    std::size_t batch = rows / seq_len;
    std::size_t period = batch == 1 ? 0 : seq_len;

    int qf = tape.matmul(x, wq);
    int kf = tape.matmul(x, wk);
    int vf = tape.matmul(x, wv);
    std::size_t d = cfg.head_dim();
    std::vector<int> heads(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        int qh = tape.xpos(tape.slice_cols(qf, h * d, (h + 1) * d), theta, 0, false, period);
        int kh = tape.xpos(tape.slice_cols(kf, h * d, (h + 1) * d), theta, 0, false, period);
        int vh = tape.slice_cols(vf, h * d, (h + 1) * d);
        int gh = cfg.trainable_gamma ? tape.slice_cols(gammas, h, h + 1) : -1;
        double gval = tape.value(gammas)[h];
        if (batch == 1) {
            heads[h] = gh >= 0 ? tape.retention(qh, kh, vh, gh, cfg.stabilized)
                               : tape.retention(qh, kh, vh, gval, cfg.stabilized);
        } else {
            heads[h] = gh >= 0
                           ? tape.retention_seq(qh, kh, vh, gh, cfg.stabilized, seq_len)
                           : tape.retention_seq(qh, kh, vh, gval, cfg.stabilized, seq_len);
        }
    }
    int y = tape.group_norm(tape.concat_cols(heads), gn_scale, gn_shift, cfg.heads,
                            kGroupNormEps);
    int gate = tape.swish(tape.matmul(x, wg));
    return tape.matmul(tape.hadamard(gate, y), wo);
}

int block_tape(Tape& tape, const BoundParams& bound, std::size_t layer, int x,
               std::size_t seq_len) {
    std::string pre = "block" + std::to_string(layer) + ".";
    int ln1 = tape.layer_norm(x, bound.id(pre + "ln1.scale"), bound.id(pre + "ln1.shift"),
                              kLayerNormEps);
    int y = tape.add(msr_tape(tape, bound, layer, ln1, seq_len), x);
    int ln2 = tape.layer_norm(y, bound.id(pre + "ln2.scale"), bound.id(pre + "ln2.shift"),
                              kLayerNormEps);
    int ffn = tape.matmul(tape.gelu(tape.matmul(ln2, bound.id(pre + "w1"))),
                          bound.id(pre + "w2"));
    return tape.add(ffn, y);
}

namespace {

int stacked_logits_tape(Tape& tape, const BoundParams& bound, const std::vector<int>& tokens,
                        std::size_t seq_len) {
    const ModelConfig& cfg = bound.cfg;
    int emb = bound.id("embedding");
    int x = tape.gather_rows(emb, tokens);
    for (std::size_t l = 0; l < cfg.layers; ++l) x = block_tape(tape, bound, l, x, seq_len);
    if (cfg.final_norm)
        x = tape.layer_norm(x, bound.id("final_ln.scale"), bound.id("final_ln.shift"),
                            kLayerNormEps);
    return tape.scale(tape.matmul_bt(x, emb), output_head_scale(cfg));
}

} // namespace

int model_logits_tape(Tape& tape, const BoundParams& bound, const std::vector<int>& tokens) {
    check_tokens(tokens, bound.cfg);
    return stacked_logits_tape(tape, bound, tokens, tokens.size());
}

BatchGraph model_batch_tape(Tape& tape, const BoundParams& bound,
                            const std::vector<int>& tokens, std::size_t seq_len,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask, double loss_scale) {
    const ModelConfig& cfg = bound.cfg;
    if (seq_len == 0 || tokens.empty() || tokens.size() % seq_len != 0)
        throw ContractError("model_batch_tape: token count must be a multiple of seq_len");
    if (targets.size() != tokens.size() || mask.size() != tokens.size())
        throw ContractError("model_batch_tape: targets/mask must match tokens");
    if (seq_len > cfg.max_positions)
        throw InputError("model_batch_tape: sequence exceeds max_positions");
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw InputError("model_batch_tape: token id out of range");
    BatchGraph g;
    g.logits = stacked_logits_tape(tape, bound, tokens, seq_len);
    g.loss = tape.scale(tape.cross_entropy(g.logits, targets, mask), loss_scale);
    return g;
}

std::vector<Tensor64> collect_param_grads(const Tape& tape, const BoundParams& bound,
                                          const std::vector<Tensor64>& node_grads) {
    std::vector<Tensor64> out;
    out.reserve(bound.ordered.size());
    for (const auto& [name, id] : bound.ordered) {
        const Tensor64& g = node_grads[static_cast<std::size_t>(id)];
        out.push_back(g.empty() ? Tensor64(tape.value(id).shape()) : g);
    }
    return out;
}

} // namespace retnet
