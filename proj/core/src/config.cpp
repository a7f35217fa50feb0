// SPDX-License-Identifier: Apache-2.0
#include "retnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace retnet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::uint64_t parse_count(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ParseError("line " + std::to_string(line) + ": expected an integer, got '" + v +
                         "'");
    }
}

double parse_real(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ParseError("line " + std::to_string(line) + ": expected a number, got '" + v +
                         "'");
    }
}

bool parse_flag(const std::string& v, int line) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ParseError("line " + std::to_string(line) + ": expected 0/1/true/false, got '" + v +
                     "'");
}

// returns false for unknown keys
bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& val,
                     int line) {
    if (key == "layers") m.layers = parse_count(val, line);
    else if (key == "d_model") m.d_model = parse_count(val, line);
    else if (key == "heads") m.heads = parse_count(val, line);
    else if (key == "ffn_dim") m.ffn_dim = parse_count(val, line);
    else if (key == "vocab_size") m.vocab_size = parse_count(val, line);
    else if (key == "chunk_len") m.chunk_len = parse_count(val, line);
    else if (key == "max_positions") m.max_positions = parse_count(val, line);
    else if (key == "stabilized") m.stabilized = parse_flag(val, line);
    else if (key == "trainable_theta") m.trainable_theta = parse_flag(val, line);
    else if (key == "trainable_gamma") m.trainable_gamma = parse_flag(val, line);
    else if (key == "final_norm") m.final_norm = parse_flag(val, line);
    else if (key == "seed") m.seed = parse_count(val, line);
    else return false;
    return true;
}

bool apply_train_key(TrainConfig& t, const std::string& key, const std::string& val,
                     int line) {
    if (key == "task") {
        if (val == "copy") t.task = Task::kCopy;
        else if (val == "associative-recall") t.task = Task::kAssociativeRecall;
        else
            throw ParseError("line " + std::to_string(line) +
                             ": task must be copy or associative-recall");
    } else if (key == "steps") t.steps = parse_count(val, line);
    else if (key == "batch_size") t.batch_size = parse_count(val, line);
    else if (key == "learning_rate") t.learning_rate = parse_real(val, line);
    else if (key == "adam_beta1") t.adam_beta1 = parse_real(val, line);
    else if (key == "adam_beta2") t.adam_beta2 = parse_real(val, line);
    else if (key == "adam_eps") t.adam_eps = parse_real(val, line);
    else if (key == "eval_interval") t.eval_interval = parse_count(val, line);
    else if (key == "seq_len") t.seq_len = parse_count(val, line);
    else if (key == "train_threads") t.threads = parse_count(val, line);
    else return false;
    return true;
}

} // namespace

Configs parse_config_text(const std::string& text) {
    Configs cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        std::size_t hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ParseError("line " + std::to_string(line) + ": expected key = value");
        if (apply_model_key(cfg.model, key, val, line)) continue;
        if (apply_train_key(cfg.train, key, val, line)) continue;
        throw ParseError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    cfg.train.seed = cfg.model.seed;  // one seed drives everything
    return cfg;
}

Configs load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string canonical_model_config(const ModelConfig& cfg) {
    auto flag = [](bool b) { return b ? "1" : "0"; };
    std::ostringstream out;  // keys sorted
    out << "chunk_len=" << cfg.chunk_len << "\n";
    out << "d_model=" << cfg.d_model << "\n";
    out << "ffn_dim=" << cfg.ffn() << "\n";
    out << "final_norm=" << flag(cfg.final_norm) << "\n";
    out << "heads=" << cfg.heads << "\n";
    out << "layers=" << cfg.layers << "\n";
    out << "max_positions=" << cfg.max_positions << "\n";
    out << "seed=" << cfg.seed << "\n";
    out << "stabilized=" << flag(cfg.stabilized) << "\n";
    out << "trainable_gamma=" << flag(cfg.trainable_gamma) << "\n";
    out << "trainable_theta=" << flag(cfg.trainable_theta) << "\n";
    out << "vocab_size=" << cfg.vocab_size << "\n";
    return out.str();
}

ModelConfig parse_model_config_text(const std::string& text) {
    ModelConfig m;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw);
        if (s.empty()) continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ParseError("model config line " + std::to_string(line) + ": not key=value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (!apply_model_key(m, key, val, line))
            throw ParseError("model config line " + std::to_string(line) + ": unknown key '" +
                             key + "'");
    }
    m.validate();
    return m;
}

} // namespace retnet
