#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "radreport/experiment.hpp"

using namespace radreport;

namespace {

const char* kMinimalConfig = R"({
  "paths": {"corpus": "c.jsonl", "vocab": "v.txt", "checkpoint_dir": "ck", "output_dir": "out"},
  "corpus": {"n_reports": 10, "seed": 1},
  "model": {"vocab_size": 0, "max_seq_len": 128, "hidden_dim": 32, "n_layers": 1,
            "n_heads": 2, "ff_dim": 64, "dropout_rate": 0.1, "seed": 2},
  "experiment": {"k_folds": 2, "sequence_length_grid": [32, 128], "noseg_seq_len": 128}
})";

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("minimal config parses with defaults") {
    const auto c = ExperimentConfig::from_json_text(kMinimalConfig);
    CHECK(c.corpus.n_reports == 10);
    CHECK(c.finetune.epochs == 4);
    CHECK(c.finetune.batch_size == 32);
    CHECK(c.finetune.learning_rate == doctest::Approx(5e-5));
    CHECK(c.pretrain.batch_size == 256);
    CHECK(c.tokenizer.vocab_size == 4000);
    CHECK(c.experiment.k_folds == 2);
}

TEST_CASE("schema violations fail before any compute") {
    SUBCASE("unknown top-level key") {
        CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"pathz": {}})"), ConfigError);
    }
    SUBCASE("unknown nested key") {
        std::string bad = kMinimalConfig;
        bad.replace(bad.find("n_reports"), 9, "n_reportz");
        CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("wrong type") {
        std::string bad = kMinimalConfig;
        bad.replace(bad.find("\"n_reports\": 10"), 15, "\"n_reports\": \"x\"");
        CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("not JSON at all") {
        CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"), ConfigError);
    }
    SUBCASE("grid beyond positional capacity") {
        std::string bad = kMinimalConfig;
        bad.replace(bad.find("[32, 128]"), 9, "[32, 512]");
        CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
    }
}

TEST_CASE("canonical json is stable and hashable") {
    const auto a = ExperimentConfig::from_json_text(kMinimalConfig);
    const auto b = ExperimentConfig::from_json_text(kMinimalConfig);
    CHECK(a.canonical_json() == b.canonical_json());
    CHECK(bytes_hash(a.canonical_json()) == bytes_hash(b.canonical_json()));

    auto c = a;
    c.experiment.seed = 99;
    CHECK(bytes_hash(c.canonical_json()) != bytes_hash(a.canonical_json()));
}

TEST_CASE("run directories are write-once") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "radreport_run_once_test";
    fs::remove_all(dir);

    start_run_dir(dir.string(), false);
    const auto config = ExperimentConfig::from_json_text(kMinimalConfig);
    write_manifest(dir.string(), "test", config, {}, {});
    CHECK_THROWS(start_run_dir(dir.string(), false));
    CHECK_NOTHROW(start_run_dir(dir.string(), true));  // --force
    fs::remove_all(dir);
}

TEST_CASE("manifest records config hash and code version") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "radreport_manifest_test";
    fs::remove_all(dir);
    start_run_dir(dir.string(), false);
    const auto config = ExperimentConfig::from_json_text(kMinimalConfig);

    const auto input = dir / "input.txt";
    std::ofstream(input) << "hello";
    write_manifest(dir.string(), "test", config, {{"input", input.string()}}, {});

    std::ifstream in(dir / "manifest.json");
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    CHECK(content.find("\"command\": \"test\"") != std::string::npos);
    CHECK(content.find("config_hash") != std::string::npos);
    CHECK(content.find(hash_to_hex(file_content_hash(input.string()))) != std::string::npos);
    fs::remove_all(dir);
}

}  // TEST_SUITE
