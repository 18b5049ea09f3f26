#include "radreport/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "radreport/checkpoint.hpp"

namespace radreport {

using njson = nlohmann::ordered_json;

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    throw ConfigError("config schema violation at " + where + ": " + what);
}

void expect_keys(const njson& obj, const std::string& where,
                 const std::set<std::string>& allowed) {
    if (!obj.is_object()) schema_error(where, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) schema_error(where, "unknown key '" + key + "'");
    }
}

template <typename T>
void read_field(const njson& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const std::exception&) {
        schema_error(where + "." + key, "wrong type");
    }
}

void read_priors(const njson& obj, const std::string& where, const char* key,
                 std::map<std::string, double>& out) {
    if (!obj.contains(key)) return;
    const auto& j = obj.at(key);
    if (!j.is_object()) schema_error(where + "." + key, "expected an object of label: prob");
    out.clear();
    for (const auto& [label, value] : j.items()) {
        if (!value.is_number()) schema_error(where + "." + key, "prior must be a number");
        out[label] = value.get<double>();
    }
}

CorpusSpec corpus_from_json(const njson& j) {
    expect_keys(j, "corpus",
                {"n_reports", "seed", "modality_priors", "previous_cancer_priors",
                 "purpose_priors", "menopausal_priors", "density_priors", "bpe_priors",
                 "section_presence", "template_bank_version"});
    CorpusSpec spec = CorpusSpec::defaults(0, 0);
    read_field(j, "corpus", "n_reports", spec.n_reports);
    read_field(j, "corpus", "seed", spec.seed);
    read_priors(j, "corpus", "modality_priors", spec.modality_priors);
    read_priors(j, "corpus", "previous_cancer_priors", spec.previous_cancer_priors);
    read_priors(j, "corpus", "purpose_priors", spec.purpose_priors);
    read_priors(j, "corpus", "menopausal_priors", spec.menopausal_priors);
    read_priors(j, "corpus", "density_priors", spec.density_priors);
    read_priors(j, "corpus", "section_presence", spec.section_presence);
    read_priors(j, "corpus", "bpe_priors", spec.bpe_priors);
    read_field(j, "corpus", "template_bank_version", spec.template_bank_version);
    return spec;
}

ModelConfig model_from_json(const njson& j) {
    expect_keys(j, "model",
                {"vocab_size", "max_seq_len", "hidden_dim", "n_layers", "n_heads", "ff_dim",
                 "dropout_rate", "seed"});
    ModelConfig m;
    read_field(j, "model", "vocab_size", m.vocab_size);
    read_field(j, "model", "max_seq_len", m.max_seq_len);
    read_field(j, "model", "hidden_dim", m.hidden_dim);
    read_field(j, "model", "n_layers", m.n_layers);
    read_field(j, "model", "n_heads", m.n_heads);
    read_field(j, "model", "ff_dim", m.ff_dim);
    read_field(j, "model", "dropout_rate", m.dropout_rate);
    read_field(j, "model", "seed", m.seed);
    return m;
}

TrainConfig train_from_json(const njson& j, const std::string& where, TrainConfig defaults) {
    expect_keys(j, where,
                {"epochs", "batch_size", "learning_rate", "weight_decay", "warmup_fraction",
                 "max_steps", "mask_prob", "seq_len", "seed", "grad_clip",
                 "checkpoint_interval", "validation_fraction", "aux_prev_source"});
    TrainConfig t = defaults;
    read_field(j, where, "epochs", t.epochs);
    read_field(j, where, "batch_size", t.batch_size);
    read_field(j, where, "learning_rate", t.learning_rate);
    read_field(j, where, "weight_decay", t.weight_decay);
    read_field(j, where, "warmup_fraction", t.warmup_fraction);
    read_field(j, where, "max_steps", t.max_steps);
    read_field(j, where, "mask_prob", t.mask_prob);
    read_field(j, where, "seq_len", t.seq_len);
    read_field(j, where, "seed", t.seed);
    read_field(j, where, "grad_clip", t.grad_clip);
    read_field(j, where, "checkpoint_interval", t.checkpoint_interval);
    read_field(j, where, "validation_fraction", t.validation_fraction);
    if (j.contains("aux_prev_source")) {
        const auto s = j.at("aux_prev_source").get<std::string>();
        if (s == "gold") {
            t.aux_prev_source = AuxPrevSource::Gold;
        } else if (s == "predicted") {
            t.aux_prev_source = AuxPrevSource::Predicted;
        } else if (s == "scheduled") {
            t.aux_prev_source = AuxPrevSource::Scheduled;
        } else {
            schema_error(where + ".aux_prev_source", "expected gold|predicted|scheduled");
        }
    }
    return t;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    njson j;
    try {
        j = njson::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_keys(j, "<root>",
                {"paths", "corpus", "tokenizer", "model", "pretrain", "finetune", "experiment"});

    ExperimentConfig c;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        expect_keys(p, "paths", {"corpus", "vocab", "checkpoint_dir", "output_dir"});
        read_field(p, "paths", "corpus", c.paths.corpus);
        read_field(p, "paths", "vocab", c.paths.vocab);
        read_field(p, "paths", "checkpoint_dir", c.paths.checkpoint_dir);
        read_field(p, "paths", "output_dir", c.paths.output_dir);
    }
    if (j.contains("corpus")) c.corpus = corpus_from_json(j.at("corpus"));
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        expect_keys(t, "tokenizer", {"vocab_size", "min_freq"});
        read_field(t, "tokenizer", "vocab_size", c.tokenizer.vocab_size);
        read_field(t, "tokenizer", "min_freq", c.tokenizer.min_freq);
    }
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    TrainConfig pretrain_defaults;
    pretrain_defaults.batch_size = 256;
    pretrain_defaults.max_steps = 1000;
    if (j.contains("pretrain")) {
        c.pretrain = train_from_json(j.at("pretrain"), "pretrain", pretrain_defaults);
    } else {
        c.pretrain = pretrain_defaults;
    }
    if (j.contains("finetune")) {
        c.finetune = train_from_json(j.at("finetune"), "finetune", TrainConfig{});
    }
    if (j.contains("experiment")) {
        const auto& e = j.at("experiment");
        expect_keys(e, "experiment",
                    {"k_folds", "ablation_fraction", "sequence_length_grid", "seg_seq_len",
                     "noseg_seq_len", "sweep_test_fraction", "seed"});
        read_field(e, "experiment", "k_folds", c.experiment.k_folds);
        read_field(e, "experiment", "ablation_fraction", c.experiment.ablation_fraction);
        read_field(e, "experiment", "sequence_length_grid", c.experiment.sequence_length_grid);
        read_field(e, "experiment", "seg_seq_len", c.experiment.seg_seq_len);
        read_field(e, "experiment", "noseg_seq_len", c.experiment.noseg_seq_len);
        read_field(e, "experiment", "sweep_test_fraction", c.experiment.sweep_test_fraction);
        read_field(e, "experiment", "seed", c.experiment.seed);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

void ExperimentConfig::validate() const {
    corpus.validate();
    model.validate();
    pretrain.validate();
    finetune.validate();
    if (experiment.k_folds < 2) throw ConfigError("experiment.k_folds must be at least 2");
    if (experiment.ablation_fraction <= 0.0 || experiment.ablation_fraction > 1.0) {
        throw ConfigError("experiment.ablation_fraction must lie in (0,1]");
    }
    if (experiment.sweep_test_fraction <= 0.0 || experiment.sweep_test_fraction >= 1.0) {
        throw ConfigError("experiment.sweep_test_fraction must lie in (0,1)");
    }
    for (int32_t len : experiment.sequence_length_grid) {
        if (len > model.max_seq_len) {
            throw ConfigError("sequence_length_grid entry " + std::to_string(len) +
                              " exceeds the positional capacity " +
                              std::to_string(model.max_seq_len));
        }
    }
    if (experiment.seg_seq_len > model.max_seq_len ||
        experiment.noseg_seq_len > model.max_seq_len) {
        throw ConfigError("segmentation sequence lengths exceed the positional capacity");
    }
}

std::string ExperimentConfig::canonical_json() const {
    njson j;
    j["paths"] = {{"corpus", paths.corpus},
                  {"vocab", paths.vocab},
                  {"checkpoint_dir", paths.checkpoint_dir},
                  {"output_dir", paths.output_dir}};
    njson priors = njson::object();
    auto put_priors = [](const std::map<std::string, double>& m) {
        njson o = njson::object();
        for (const auto& [k, v] : m) o[k] = v;
        return o;
    };
    j["corpus"] = {{"n_reports", corpus.n_reports},
                   {"seed", corpus.seed},
                   {"modality_priors", put_priors(corpus.modality_priors)},
                   {"previous_cancer_priors", put_priors(corpus.previous_cancer_priors)},
                   {"purpose_priors", put_priors(corpus.purpose_priors)},
                   {"menopausal_priors", put_priors(corpus.menopausal_priors)},
                   {"density_priors", put_priors(corpus.density_priors)},
                   {"bpe_priors", put_priors(corpus.bpe_priors)},
                   {"section_presence", put_priors(corpus.section_presence)},
                   {"template_bank_version", corpus.template_bank_version}};
    j["tokenizer"] = {{"vocab_size", tokenizer.vocab_size}, {"min_freq", tokenizer.min_freq}};
    j["model"] = {{"vocab_size", model.vocab_size}, {"max_seq_len", model.max_seq_len},
                  {"hidden_dim", model.hidden_dim}, {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},       {"ff_dim", model.ff_dim},
                  {"dropout_rate", model.dropout_rate}, {"seed", model.seed}};
    auto train_json = [](const TrainConfig& t) {
        const char* aux = t.aux_prev_source == AuxPrevSource::Gold        ? "gold"
                          : t.aux_prev_source == AuxPrevSource::Predicted ? "predicted"
                                                                          : "scheduled";
        return njson{{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.learning_rate},
                     {"weight_decay", t.weight_decay},
                     {"warmup_fraction", t.warmup_fraction},
                     {"max_steps", t.max_steps},
                     {"mask_prob", t.mask_prob},
                     {"seq_len", t.seq_len},
                     {"seed", t.seed},
                     {"grad_clip", t.grad_clip},
                     {"checkpoint_interval", t.checkpoint_interval},
                     {"validation_fraction", t.validation_fraction},
                     {"aux_prev_source", aux}};
    };
    j["pretrain"] = train_json(pretrain);
    j["finetune"] = train_json(finetune);
    j["experiment"] = {{"k_folds", experiment.k_folds},
                       {"ablation_fraction", experiment.ablation_fraction},
                       {"sequence_length_grid", experiment.sequence_length_grid},
                       {"seg_seq_len", experiment.seg_seq_len},
                       {"noseg_seq_len", experiment.noseg_seq_len},
                       {"sweep_test_fraction", experiment.sweep_test_fraction},
                       {"seed", experiment.seed}};
    return j.dump();
}

uint64_t bytes_hash(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t file_content_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return bytes_hash(buf.str());
}

std::string hash_to_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void start_run_dir(const std::string& run_dir, bool force) {
    namespace fs = std::filesystem;
    const fs::path manifest = fs::path(run_dir) / "manifest.json";
    if (fs::exists(manifest) && !force) {
        throw std::runtime_error("run directory already holds a manifest (outputs are "
                                 "write-once): " +
                                 run_dir);
    }
    fs::create_directories(run_dir);
}

void write_manifest(const std::string& run_dir, const std::string& command,
                    const ExperimentConfig& config,
                    const std::map<std::string, std::string>& input_files,
                    const std::map<std::string, std::string>& output_files) {
    njson j;
    j["command"] = command;
    j["code_version"] = kCodeVersion;
    j["config_hash"] = hash_to_hex(bytes_hash(config.canonical_json()));
    njson inputs = njson::object();
    for (const auto& [name, path] : input_files) {
        inputs[name] = njson{{"path", path}, {"hash", hash_to_hex(file_content_hash(path))}};
    }
    j["inputs"] = std::move(inputs);
    njson outputs = njson::object();
    for (const auto& [name, path] : output_files) {
        outputs[name] = njson{{"path", path}, {"hash", hash_to_hex(file_content_hash(path))}};
    }
    j["outputs"] = std::move(outputs);

    std::ofstream out((std::filesystem::path(run_dir) / "manifest.json").string(),
                      std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + run_dir);
    out << j.dump(2) << '\n';
}

}  // namespace radreport
