#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "metaptq/checkpoint.hpp"
#include "metaptq/config.hpp"
#include "metaptq/metrics.hpp"

using namespace metaptq;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/metaptq_test_") + name;
}

int run_cli(const std::string& args) {
    std::string cmd = std::string(METAPTQ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config defaults and presets") {
    RunConfig desk = preset_config("desk");
    CHECK(desk.lambda1 == 5.0);
    CHECK(desk.lambda2 == 0.5);
    CHECK(desk.epsilon == 0.1);
    CHECK(desk.preserve == "kl");
    RunConfig paper = preset_config("paper");
    CHECK(paper.n_meta == 500);
    CHECK(paper.n_quant == 20000);
    CHECK(paper.gamma == 5e-6);
    CHECK(paper.batch == 32);
    CHECK_THROWS_AS(preset_config("gpu"), ConfigError);
}

TEST_CASE("lambda3 resolves per preservation kind") {
    RunConfig cfg;
    cfg.lambda3 = -1.0;
    cfg.preserve = "mse";
    CHECK(cfg.resolved_lambda3() == 1.0);
    cfg.preserve = "kl";
    CHECK(cfg.resolved_lambda3() == 5.0);
    cfg.preserve = "dp";
    CHECK(cfg.resolved_lambda3() == 3.0e4);
    cfg.lambda3 = 7.5;
    CHECK(cfg.resolved_lambda3() == 7.5);
}

TEST_CASE("strict json parsing") {
    RunConfig ok = parse_config_json(R"({"w_bits": 4, "a_bits": 8, "seed": 3})", "desk");
    CHECK(ok.w_bits == 4);
    CHECK(ok.a_bits == 8);
    CHECK(ok.seed == 3);

    // unknown keys are hard errors that name the key
    try {
        parse_config_json(R"({"lamda1": 5.0})", "desk");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("lamda1") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_json(R"({"w_bits": "two"})", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"w_bits": 5})", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_config_json("not json", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"([1,2])", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"augment": "blur"})", "desk"), ConfigError);
    // preset can come from the file itself
    RunConfig viapreset = parse_config_json(R"({"preset": "paper"})", "desk");
    CHECK(viapreset.n_quant == 20000);
}

TEST_CASE("config hash is stable and sensitive") {
    RunConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 1;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_to_json(a) == config_to_json(a));
}

TEST_CASE("checkpoint round trip is bit exact") {
    std::string path = tmp_path("ckpt");
    Tensor a = Tensor::param({3}, {1.0 / 3.0, -0.0, 5e-324});  // awkward doubles
    Tensor b = Tensor::param({2, 2}, {1e300, -1e-300, 0.1, 2.5});
    save_checkpoint(path, 0xabcd, {{"a", a}, {"b", b}});

    CheckpointData data = read_checkpoint(path);
    CHECK(data.config_hash == 0xabcd);
    REQUIRE(data.entries.size() == 2);
    CHECK(data.entries[0].values == a.values());
    CHECK(data.entries[1].values == b.values());

    Tensor a2 = Tensor::param({3}, {0, 0, 0});
    Tensor b2 = Tensor::param({2, 2}, {0, 0, 0, 0});
    load_checkpoint(path, 0xabcd, {{"a", a2}, {"b", b2}});
    CHECK(a2.values() == a.values());
    CHECK(b2.values() == b.values());

    // saving the loaded values again reproduces the file byte for byte
    std::string path2 = tmp_path("ckpt2");
    save_checkpoint(path2, 0xabcd, {{"a", a2}, {"b", b2}});
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove(path2.c_str());

    CHECK_THROWS_AS(load_checkpoint(path, 0x9999, {{"a", a2}}), IoError);
    CHECK_THROWS_AS(load_checkpoint(path, 0xabcd, {{"missing", a2}}), IoError);
    Tensor wrong_shape = Tensor::param({4}, {0, 0, 0, 0});
    CHECK_THROWS_AS(load_checkpoint(path, 0xabcd, {{"a", wrong_shape}}), IoError);
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
    std::string path = tmp_path("corrupt");
    Tensor a = Tensor::param({4}, {1, 2, 3, 4});
    save_checkpoint(path, 1, {{"a", a}});

    // truncated payload
    {
        std::ifstream in(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 5));
    }
    CHECK_THROWS_AS(read_checkpoint(path), IoError);

    // bad magic
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOT-A-CKPT v1\n";
    }
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_checkpoint(tmp_path("missing_file")), IoError);
}

TEST_CASE("metrics tables round trip losslessly") {
    MetricsTable t;
    t.columns = {"train_acc", "test_acc", "gap"};
    t.add_row("none", {1.0 / 3.0, 0.1234567890123456, -0.5});
    t.add_row("metaaug", {1e-17, 0.9999999999999999, 42.0});
    std::string tsv = metrics_to_tsv(t);
    MetricsTable back = metrics_from_tsv(tsv);
    CHECK(back.columns == t.columns);
    CHECK(back.row_names == t.row_names);
    for (size_t i = 0; i < t.rows.size(); ++i) {
        for (size_t j = 0; j < t.rows[i].size(); ++j) {
            CHECK(back.rows[i][j] == t.rows[i][j]);  // bit-exact via 17 digits
        }
    }
    CHECK(back.at("none", "gap") == -0.5);
    CHECK_THROWS_AS(back.at("flip", "gap"), DataError);
    CHECK_THROWS_AS(metrics_from_tsv("wrong\theader\n"), DataError);
    CHECK_THROWS_AS(metrics_from_tsv("name\tx\nrow\tabc\n"), DataError);
    CHECK_THROWS_AS(t.add_row("short", {1.0}), DataError);
}

TEST_CASE("cli maps error classes to exit codes") {
    CHECK(run_cli("check-hypergrad --trials 1") == 0);
    // unknown subcommand / bad flags -> usage error
    CHECK(run_cli("frobnicate") == 2);
    // config errors
    std::string bad = tmp_path("bad.json");
    {
        std::ofstream out(bad);
        out << R"({"lamda1": 5})";
    }
    CHECK(run_cli("eval --config " + bad) == 2);
    std::remove(bad.c_str());
    // io errors
    CHECK(run_cli("eval --config /tmp/metaptq_no_such_config.json") == 5);
}
