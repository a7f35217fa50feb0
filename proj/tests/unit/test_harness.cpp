// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "retnet/bench.hpp"
#include "retnet/config.hpp"
#include "retnet/prng.hpp"

using namespace retnet;

TEST_CASE("prng") {
    Prng a(99), b(99);
    for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
    Prng c(100);
    CHECK(Prng(99).next_u64() != c.next_u64());
    Prng u(7);
    for (int i = 0; i < 1000; ++i) {
        double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(Prng::derive(1, 0) != Prng::derive(1, 1));
    CHECK(Prng::derive(1, 0) == Prng::derive(1, 0));
}

TEST_CASE("config parsing") {
    SUBCASE("empty text gives defaults") {
        Configs cfg = parse_config_text("");
        CHECK(cfg.model.layers == 2);
        CHECK(cfg.model.d_model == 64);
        CHECK(cfg.model.ffn() == 128);
        CHECK(cfg.train.learning_rate == 3e-4);
        CHECK(cfg.train.adam_beta2 == 0.98);
    }
    SUBCASE("overrides and comments") {
        Configs cfg = parse_config_text("# a comment\nlayers = 3\n\nd_model=32 # trailing\n"
                                        "stabilized = true\ntask = associative-recall\n"
                                        "learning_rate = 1e-3\n");
        CHECK(cfg.model.layers == 3);
        CHECK(cfg.model.d_model == 32);
        CHECK(cfg.model.stabilized);
        CHECK(cfg.train.task == Task::kAssociativeRecall);
        CHECK(cfg.train.learning_rate == 1e-3);
    }
    SUBCASE("one seed drives model and training") {
        Configs cfg = parse_config_text("seed = 17\n");
        CHECK(cfg.model.seed == 17);
        CHECK(cfg.train.seed == 17);
    }
    SUBCASE("unknown key names its line") {
        try {
            parse_config_text("layres = 2\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 1") != std::string::npos);
            CHECK(std::string(e.what()).find("layres") != std::string::npos);
        }
        try {
            parse_config_text("layers = 2\nbogus = 1\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SUBCASE("malformed values") {
        CHECK_THROWS_AS(parse_config_text("layers = banana\n"), ParseError);
        CHECK_THROWS_AS(parse_config_text("stabilized = maybe\n"), ParseError);
        CHECK_THROWS_AS(parse_config_text("task = copyy\n"), ParseError);
        CHECK_THROWS_AS(parse_config_text("layers\n"), ParseError);
    }
    SUBCASE("canonical round trip") {
        ModelConfig m;
        m.layers = 3;
        m.d_model = 48;
        m.heads = 6;
        m.stabilized = true;
        m.seed = 99;
        std::string text = canonical_model_config(m);
        // keys sorted, one per line
        std::istringstream in(text);
        std::string prev, line;
        while (std::getline(in, line)) {
            std::string key = line.substr(0, line.find('='));
            CHECK(prev < key);
            prev = key;
        }
        ModelConfig back = parse_model_config_text(text);
        CHECK(back.layers == 3);
        CHECK(back.d_model == 48);
        CHECK(back.heads == 6);
        CHECK(back.stabilized);
        CHECK(back.seed == 99);
        CHECK(back.ffn() == 96);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_config("/no/such/file.conf"), Error); }
}

namespace {

ModelConfig tiny_bench_config() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.vocab_size = 16;
    cfg.chunk_len = 4;
    cfg.max_positions = 256;
    cfg.seed = 12;
    return cfg;
}

} // namespace

TEST_CASE("bench harness") {
    ModelConfig cfg = tiny_bench_config();
    SUBCASE("one record per mechanism and length") {
        auto records = bench_decode(cfg, {16, 32}, Mechanism::kBoth, Precision::kF32);
        REQUIRE(records.size() == 4);
        CHECK(records[0].mechanism == "retention");
        CHECK(records[2].mechanism == "attention");
        CHECK(records[0].state_bytes == records[1].state_bytes);  // constant state
        CHECK(records[3].state_bytes > records[2].state_bytes);   // growing cache
    }
    SUBCASE("csv schema") {
        auto records = bench_decode(cfg, {16}, Mechanism::kRetention, Precision::kF32);
        auto path = std::filesystem::temp_directory_path() / "retnet_bench_test.csv";
        write_bench_csv(path.string(), records, 1, Precision::kF32);
        std::ifstream in(path);
        std::string line, header;
        while (std::getline(in, line)) {
            if (!line.empty() && line[0] == '#') continue;
            header = line;
            break;
        }
        CHECK(header ==
              "mechanism,mode,seq_len,d_model,heads,layers,wall_ms,tokens_per_s,state_bytes");
        std::getline(in, line);
        CHECK(line.substr(0, 13) == "retention,rec");
        std::filesystem::remove(path);
    }
    SUBCASE("mac proxy: retention flat, attention affine in position") {
        std::uint64_t r1 = retention_decode_macs_at(cfg, 3);
        std::uint64_t r2 = retention_decode_macs_at(cfg, 40);
        std::uint64_t r3 = retention_decode_macs_at(cfg, 97);
        CHECK(r1 == r2);
        CHECK(r2 == r3);
        std::uint64_t a1 = attention_decode_macs_at(cfg, 10);
        std::uint64_t a2 = attention_decode_macs_at(cfg, 20);
        std::uint64_t a3 = attention_decode_macs_at(cfg, 40);
        std::uint64_t a4 = attention_decode_macs_at(cfg, 100);
        // exact affine fit through two points extrapolates to the others
        REQUIRE(a2 > a1);
        std::uint64_t slope10 = a2 - a1;  // 10 positions apart
        CHECK(slope10 % 10 == 0);
        std::uint64_t slope = slope10 / 10;
        CHECK(a3 == a2 + 20 * slope);
        CHECK(a4 == a3 + 60 * slope);
    }
    SUBCASE("length guards") {
        CHECK_THROWS_AS(bench_decode(cfg, {1}, Mechanism::kBoth, Precision::kF32),
                        ParameterError);
        CHECK_THROWS_AS(bench_decode(cfg, {1024}, Mechanism::kBoth, Precision::kF32),
                        ParameterError);
    }
}

#ifdef RETNET_CLI_PATH
namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(RETNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("cli exit codes") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("train --no-such-flag") == 2);
    CHECK(run_cli("generate --ckpt /no/such/file.ckpt --prompt 1 --steps 2") == 2);

    auto dir = std::filesystem::temp_directory_path();
    auto conf = dir / "retnet_cli_test.conf";
    auto ckpt = dir / "retnet_cli_test.ckpt";
    auto metrics = dir / "retnet_cli_test.csv";
    {
        std::ofstream out(conf);
        out << "layers = 1\nd_model = 16\nheads = 2\nvocab_size = 8\nmax_positions = 64\n"
            << "steps = 3\nbatch_size = 2\nseq_len = 8\neval_interval = 1\nstabilized = 1\n";
    }
    CHECK(run_cli("train --config " + conf.string() + " --out " + ckpt.string() +
                  " --metrics " + metrics.string()) == 0);
    CHECK(std::filesystem::exists(ckpt));
    {
        std::ifstream in(metrics);
        std::string header;
        std::getline(in, header);
        CHECK(header == "step,loss,accuracy");
    }
    CHECK(run_cli("generate --ckpt " + ckpt.string() + " --prompt 1,2,3 --steps 4") == 0);
    CHECK(run_cli("generate --ckpt " + ckpt.string() +
                  " --prompt 1,2,3 --steps 4 --mode chunkwise") == 0);
    CHECK(run_cli("generate --ckpt " + ckpt.string() +
                  " --prompt 1,2,3 --steps 4 --mode parallel --sample") == 0);
    CHECK(run_cli("generate --ckpt " + ckpt.string() + " --prompt 1,2,3 --steps 4 "
                  "--mode sideways") == 2);
    CHECK(run_cli("bench --mechanism neither") == 2);
    std::filesystem::remove(conf);
    std::filesystem::remove(ckpt);
    std::filesystem::remove(metrics);
}
#endif
