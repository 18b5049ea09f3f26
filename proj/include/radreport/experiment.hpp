#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "radreport/corpus.hpp"
#include "radreport/encoder.hpp"
#include "radreport/training.hpp"

namespace radreport {

struct PathsConfig {
    std::string corpus;
    std::string vocab;
    std::string checkpoint_dir;
    std::string output_dir;
};

struct TokenizerConfig {
    int vocab_size = 4000;
    int min_freq = 2;
};

struct ExperimentSection {
    int k_folds = 5;
    double ablation_fraction = 1.0;
    std::vector<int32_t> sequence_length_grid = {32, 128, 512};
    int32_t seg_seq_len = 32;
    int32_t noseg_seq_len = 512;
    double sweep_test_fraction = 0.2;
    uint64_t seed = 0;
};

// The one configuration file driving every subcommand. Parsing is strict:
// unknown keys and type mismatches fail before any compute starts.
struct ExperimentConfig {
    PathsConfig paths;
    CorpusSpec corpus;
    TokenizerConfig tokenizer;
    ModelConfig model;
    TrainConfig pretrain;
    TrainConfig finetune;
    ExperimentSection experiment;

    static ExperimentConfig from_json_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);

    // canonical serialization; its hash goes into run manifests
    std::string canonical_json() const;

    void validate() const;
};

uint64_t bytes_hash(const std::string& bytes);
uint64_t file_content_hash(const std::string& path);
std::string hash_to_hex(uint64_t h);

// Creates run_dir (refusing to reuse one that already holds a manifest
// unless `force`), then writes manifest.json recording the config hash,
// input/output file hashes, and the code version. No timestamps: reruns
// of identical inputs produce identical manifests.
void start_run_dir(const std::string& run_dir, bool force);
void write_manifest(const std::string& run_dir, const std::string& command,
                    const ExperimentConfig& config,
                    const std::map<std::string, std::string>& input_files,
                    const std::map<std::string, std::string>& output_files);

}  // namespace radreport
