#include "radreport/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "radreport/checkpoint.hpp"
#include "radreport/evalstat.hpp"
#include "radreport/experiment.hpp"
#include "radreport/pipeline.hpp"

namespace radreport {

namespace fs = std::filesystem;
using njson = nlohmann::ordered_json;

namespace {

ExperimentConfig load_config(const CommandOptions& opt) {
    ExperimentConfig config = ExperimentConfig::from_json_file(opt.config_path);
    if (const char* env = std::getenv("EXP_OUTPUT_DIR"); env && *env) {
        config.paths.output_dir = env;
    }
    if (opt.seed_override) {
        config.corpus.seed = *opt.seed_override;
        config.model.seed = *opt.seed_override;
        config.pretrain.seed = *opt.seed_override;
        config.finetune.seed = *opt.seed_override;
        config.experiment.seed = *opt.seed_override;
    }
    if (opt.ablation_override) {
        config.experiment.ablation_fraction = *opt.ablation_override;
        if (config.experiment.ablation_fraction <= 0.0 ||
            config.experiment.ablation_fraction > 1.0) {
            throw ConfigError("--ablation must lie in (0,1]");
        }
    }
    if (config.paths.output_dir.empty()) throw ConfigError("paths.output_dir is required");
    return config;
}

std::string run_dir_for(const ExperimentConfig& config, const CommandOptions& opt,
                        const std::string& default_name) {
    const std::string name = opt.run_name.empty() ? default_name : opt.run_name;
    return (fs::path(config.paths.output_dir) / name).string();
}

Vocab load_vocab_checked(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("missing vocabulary file: " + path);
    return load_vocab(path);
}

std::vector<LabeledReport> load_corpus_checked(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("missing corpus file: " + path);
    return load_corpus(path);
}

Model<float> load_base_checked(const ExperimentConfig& config, const Vocab& vocab,
                               std::string* path_out) {
    const std::string path =
        (fs::path(config.paths.checkpoint_dir) / "final.ckpt").string();
    if (!fs::exists(path)) throw std::runtime_error("missing base checkpoint: " + path);
    CheckpointInfo info;
    Model<float> base = load_checkpoint(path, &info);
    if (info.vocab_hash != vocab.content_hash()) {
        throw std::runtime_error("checkpoint was trained with a different vocabulary: " + path);
    }
    if (path_out) *path_out = path;
    return base;
}

ModelConfig resolve_model_config(const ExperimentConfig& config, const Vocab& vocab) {
    ModelConfig m = config.model;
    if (m.vocab_size == 0) {
        m.vocab_size = vocab.size();
    } else if (m.vocab_size != vocab.size()) {
        throw ConfigError("model.vocab_size (" + std::to_string(m.vocab_size) +
                          ") does not match the vocabulary (" + std::to_string(vocab.size()) +
                          "); set it to 0 to infer");
    }
    return m;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
}

ExperimentConfigs experiment_configs(const ExperimentConfig& config) {
    ExperimentConfigs cfg;
    cfg.finetune = config.finetune;
    cfg.seg_seq_len = config.experiment.seg_seq_len;
    cfg.noseg_seq_len = config.experiment.noseg_seq_len;
    cfg.ablation_fraction = config.experiment.ablation_fraction;
    return cfg;
}

std::vector<std::string> modality_strata(const std::vector<LabeledReport>& corpus) {
    std::vector<std::string> strata;
    strata.reserve(corpus.size());
    for (const auto& r : corpus) strata.push_back(r.fields.modality);
    return strata;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_generate(const CommandOptions& opt) {
    const auto config = load_config(opt);
    if (config.paths.corpus.empty()) throw ConfigError("paths.corpus is required");
    const std::string run_dir = run_dir_for(config, opt, "generate");
    start_run_dir(run_dir, opt.force);

    const auto corpus = generate_corpus(config.corpus);
    fs::create_directories(fs::path(config.paths.corpus).parent_path());
    save_corpus(corpus, config.paths.corpus);
    std::cout << "generated " << corpus.size() << " reports -> " << config.paths.corpus
              << "\n";

    write_manifest(run_dir, "generate", config, {}, {{"corpus", config.paths.corpus}});
    return 0;
}

int cmd_train_tokenizer(const CommandOptions& opt) {
    const auto config = load_config(opt);
    const std::string run_dir = run_dir_for(config, opt, "train-tokenizer");
    start_run_dir(run_dir, opt.force);

    const auto corpus = load_corpus_checked(config.paths.corpus);
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto& r : corpus) texts.push_back(r.text);
    const Vocab vocab =
        train_wordpiece(texts, config.tokenizer.vocab_size, config.tokenizer.min_freq);
    fs::create_directories(fs::path(config.paths.vocab).parent_path());
    save_vocab(vocab, config.paths.vocab);
    std::cout << "trained vocabulary of " << vocab.size() << " tokens -> "
              << config.paths.vocab << "\n";

    write_manifest(run_dir, "train-tokenizer", config, {{"corpus", config.paths.corpus}},
                   {{"vocab", config.paths.vocab}});
    return 0;
}

int cmd_pretrain(const CommandOptions& opt) {
    const auto config = load_config(opt);
    const std::string run_dir = run_dir_for(config, opt, "pretrain");
    start_run_dir(run_dir, opt.force);

    const auto corpus = load_corpus_checked(config.paths.corpus);
    const Vocab vocab = load_vocab_checked(config.paths.vocab);
    const ModelConfig mc = resolve_model_config(config, vocab);

    TrainLog log;
    Model<float> model =
        pretrain(corpus, vocab, mc, config.pretrain, log, config.paths.checkpoint_dir);
    const std::string log_path = (fs::path(run_dir) / "trainlog.csv").string();
    log.save_csv(log_path);
    const std::string final_path =
        (fs::path(config.paths.checkpoint_dir) / "final.ckpt").string();
    std::cout << "pre-trained " << config.pretrain.max_steps << " steps -> " << final_path
              << "\n";

    write_manifest(run_dir, "pretrain", config,
                   {{"corpus", config.paths.corpus}, {"vocab", config.paths.vocab}},
                   {{"checkpoint", final_path}, {"trainlog", log_path}});
    return 0;
}

int cmd_finetune(const CommandOptions& opt) {
    const auto config = load_config(opt);
    if (opt.task.empty()) throw ConfigError("finetune requires --task");
    const std::string run_dir = run_dir_for(config, opt, "finetune-" + opt.task);
    start_run_dir(run_dir, opt.force);

    const auto corpus = load_corpus_checked(config.paths.corpus);
    const Vocab vocab = load_vocab_checked(config.paths.vocab);
    std::string base_path;
    const Model<float> base = load_base_checked(config, vocab, &base_path);

    std::vector<const LabeledReport*> all;
    all.reserve(corpus.size());
    for (const auto& r : corpus) all.push_back(&r);

    TrainLog log;
    Model<float> model;
    if (opt.task == "seg-aux" || opt.task == "seg-noaux") {
        model = train_segmenter(all, base, vocab, config.finetune,
                                config.experiment.seg_seq_len, opt.task == "seg-aux", log);
    } else {
        const auto& task = FieldTask::get(field_task_from_string(opt.task));
        const auto data =
            build_field_dataset_routed(all, task, vocab, task.default_seq_len);
        model = finetune(data, base, config.finetune, log);
    }

    const std::string ckpt_path =
        (fs::path(config.paths.checkpoint_dir) / (opt.task + ".ckpt")).string();
    fs::create_directories(config.paths.checkpoint_dir);
    save_checkpoint(ckpt_path, model, vocab.content_hash(),
                    "finetune task=" + opt.task +
                        " seed=" + std::to_string(config.finetune.seed));
    const std::string log_path = (fs::path(run_dir) / "trainlog.csv").string();
    log.save_csv(log_path);
    std::cout << "fine-tuned " << opt.task << " -> " << ckpt_path << "\n";

    write_manifest(run_dir, "finetune", config,
                   {{"corpus", config.paths.corpus},
                    {"vocab", config.paths.vocab},
                    {"base_checkpoint", base_path}},
                   {{"checkpoint", ckpt_path}, {"trainlog", log_path}});
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

void write_seg_outputs(const std::string& run_dir, const std::string& variant,
                       const ExperimentResult& result,
                       const std::vector<LabeledReport>& corpus,
                       const std::vector<FoldSplit>& folds) {
    std::ostringstream folds_csv;
    folds_csv << "fold,n_sentences,accuracy,gf1\n";
    std::ostringstream samples_csv;
    samples_csv << "fold,report_id,accuracy,gf1\n";
    std::ostringstream preds_jsonl;

    std::vector<double> all_acc, all_gf1;
    for (size_t f = 0; f < result.seg_folds.size(); ++f) {
        const auto& fold = result.seg_folds[f];
        folds_csv << f << ',' << fold.sentences.n_items << ',' << fmt(fold.sentences.accuracy)
                  << ',' << fmt(fold.sentences.gf1) << '\n';
        for (size_t i = 0; i < fold.report_ids.size(); ++i) {
            samples_csv << f << ',' << fold.report_ids[i] << ','
                        << fmt(fold.report_accuracy[i]) << ',' << fmt(fold.report_gf1[i])
                        << '\n';
            all_acc.push_back(fold.report_accuracy[i]);
            all_gf1.push_back(fold.report_gf1[i]);
        }
        for (size_t i = 0; i < fold.segmented.size(); ++i) {
            njson j;
            j["report_id"] = fold.segmented[i].report_id;
            njson sections = njson::array();
            for (int32_t label : fold.segmented[i].labels) {
                sections.push_back(to_string(static_cast<SectionLabel>(label)));
            }
            j["sections"] = std::move(sections);
            j["fields"] = njson::object();
            preds_jsonl << j.dump() << '\n';
        }
    }
    (void)corpus;
    (void)folds;

    auto mean_sd = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return std::pair{mean, std::sqrt(var)};
    };
    const auto [acc_mean, acc_sd] = mean_sd(all_acc);
    const auto [gf1_mean, gf1_sd] = mean_sd(all_gf1);

    std::ostringstream md;
    md << "# Section segmentation (" << variant << ")\n\n";
    md << "| Variant | Ave. Acc. ± Std.Dev. | Ave. G.F1 ± Std.Dev. |\n";
    md << "|---|---|---|\n";
    char line[160];
    std::snprintf(line, sizeof(line), "| %s | %.1f ± %.1f%% | %.1f ± %.1f%% |\n",
                  variant.c_str(), 100.0 * acc_mean, 100.0 * acc_sd, 100.0 * gf1_mean,
                  100.0 * gf1_sd);
    md << line << "\nPer-fold sentence-level metrics live in folds.csv; per-report samples "
                  "feed the statistical comparison.\n";

    write_text((fs::path(run_dir) / "folds.csv").string(), folds_csv.str());
    write_text((fs::path(run_dir) / "report_samples.csv").string(), samples_csv.str());
    write_text((fs::path(run_dir) / "predictions.jsonl").string(), preds_jsonl.str());
    write_text((fs::path(run_dir) / "summary.md").string(), md.str());
}

void write_field_outputs(const std::string& run_dir, const std::string& variant,
                         const ExperimentResult& result, bool with_seg, int32_t noseg_len) {
    std::ostringstream folds_csv;
    folds_csv << "fold,task,n,accuracy,gf1\n";
    std::ostringstream correct_csv;
    correct_csv << "fold,task,report_id,pred,gold,correct\n";
    std::ostringstream preds_jsonl;

    std::map<FieldTaskKind, std::pair<double, double>> pooled;  // task -> (sum acc, sum gf1)
    std::map<FieldTaskKind, int64_t> pooled_n;
    for (size_t f = 0; f < result.field_folds.size(); ++f) {
        const auto& fold = result.field_folds[f];
        for (const auto& task : FieldTask::all()) {
            const auto& report = fold.by_task.at(task.kind);
            folds_csv << f << ',' << to_string(task.kind) << ',' << report.n_items << ','
                      << fmt(report.accuracy) << ',' << fmt(report.gf1) << '\n';
            pooled[task.kind].first += report.accuracy;
            pooled[task.kind].second += report.gf1;
            pooled_n[task.kind] += report.n_items;
            const auto& preds = fold.preds.at(task.kind);
            const auto& golds = fold.golds.at(task.kind);
            for (size_t i = 0; i < fold.report_ids.size(); ++i) {
                correct_csv << f << ',' << to_string(task.kind) << ',' << fold.report_ids[i]
                            << ',' << task.class_names[static_cast<size_t>(preds[i])] << ','
                            << task.class_names[static_cast<size_t>(golds[i])] << ','
                            << (preds[i] == golds[i] ? 1 : 0) << '\n';
            }
        }
        for (size_t i = 0; i < fold.report_ids.size(); ++i) {
            njson j;
            j["report_id"] = fold.report_ids[i];
            j["sections"] = njson::array();
            njson fields = njson::object();
            for (const auto& task : FieldTask::all()) {
                fields[to_string(task.kind)] =
                    task.class_names[static_cast<size_t>(fold.preds.at(task.kind)[i])];
            }
            j["fields"] = std::move(fields);
            preds_jsonl << j.dump() << '\n';
        }
    }

    std::ostringstream md;
    md << "# Field extraction (" << variant << ")\n\n";
    md << "| Task | SL | Section Used | n | Acc. (G.F1) |\n|---|---|---|---|---|\n";
    const auto n_folds = static_cast<double>(result.field_folds.size());
    for (const auto& task : FieldTask::all()) {
        char line[200];
        const std::string section =
            with_seg ? to_string(task.routed_section) : "whole report";
        const int32_t sl = with_seg ? task.default_seq_len : noseg_len;
        std::snprintf(line, sizeof(line), "| %s | %d | %s | %lld | %.1f%% (%.1f%%) |\n",
                      to_string(task.kind), sl, section.c_str(),
                      static_cast<long long>(pooled_n[task.kind]),
                      100.0 * pooled[task.kind].first / n_folds,
                      100.0 * pooled[task.kind].second / n_folds);
        md << line;
    }
    md << "\nAcc and G.F1 are fold averages; per-item correctness lives in "
          "item_correct.csv.\n";

    write_text((fs::path(run_dir) / "folds.csv").string(), folds_csv.str());
    write_text((fs::path(run_dir) / "item_correct.csv").string(), correct_csv.str());
    write_text((fs::path(run_dir) / "predictions.jsonl").string(), preds_jsonl.str());
    write_text((fs::path(run_dir) / "summary.md").string(), md.str());
}

}  // namespace

int cmd_evaluate(const CommandOptions& opt) {
    const auto config = load_config(opt);
    if (opt.variant.empty()) throw ConfigError("evaluate requires --variant");
    const ExperimentVariant variant = variant_from_string(opt.variant);
    const std::string run_dir = run_dir_for(config, opt, opt.variant);
    start_run_dir(run_dir, opt.force);

    const auto corpus = load_corpus_checked(config.paths.corpus);
    const Vocab vocab = load_vocab_checked(config.paths.vocab);
    std::string base_path;
    const Model<float> base = load_base_checked(config, vocab, &base_path);

    const auto folds =
        stratified_kfold(static_cast<int64_t>(corpus.size()), config.experiment.k_folds,
                         modality_strata(corpus), config.experiment.seed);
    const auto cfg = experiment_configs(config);
    const auto result =
        run_experiment(corpus, folds, variant, base, vocab, cfg, opt.jobs);

    if (variant == ExperimentVariant::SegAux || variant == ExperimentVariant::SegNoAux) {
        write_seg_outputs(run_dir, opt.variant, result, corpus, folds);
    } else {
        write_field_outputs(run_dir, opt.variant, result,
                            variant == ExperimentVariant::FieldSeg, cfg.noseg_seq_len);
    }
    std::cout << "evaluated " << opt.variant << " over " << folds.size() << " folds -> "
              << run_dir << "\n";

    write_manifest(run_dir, "evaluate", config,
                   {{"corpus", config.paths.corpus},
                    {"vocab", config.paths.vocab},
                    {"base_checkpoint", base_path}},
                   {{"folds", (fs::path(run_dir) / "folds.csv").string()},
                    {"predictions", (fs::path(run_dir) / "predictions.jsonl").string()}});
    return 0;
}

// ---------------------------------------------------------------------------
// compare

namespace {

struct SegSamples {
    std::vector<double> accuracy;
    std::vector<double> gf1;
    std::vector<std::string> keys;  // fold:report_id
};

SegSamples read_report_samples(const std::string& run_dir) {
    const std::string path = (fs::path(run_dir) / "report_samples.csv").string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing report samples (is this a seg run?): " + path);
    SegSamples out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string fold, id, acc, gf1;
        std::getline(row, fold, ',');
        std::getline(row, id, ',');
        std::getline(row, acc, ',');
        std::getline(row, gf1, ',');
        out.keys.push_back(fold + ":" + id);
        out.accuracy.push_back(std::stod(acc));
        out.gf1.push_back(std::stod(gf1));
    }
    return out;
}

struct ItemCorrect {
    // task -> aligned correctness flags and keys
    std::map<std::string, std::vector<int32_t>> correct;
    std::map<std::string, std::vector<std::string>> keys;
};

ItemCorrect read_item_correct(const std::string& run_dir) {
    const std::string path = (fs::path(run_dir) / "item_correct.csv").string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing item correctness (is this a field run?): " + path);
    ItemCorrect out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string fold, task, id, pred, gold, correct;
        std::getline(row, fold, ',');
        std::getline(row, task, ',');
        std::getline(row, id, ',');
        std::getline(row, pred, ',');
        std::getline(row, gold, ',');
        std::getline(row, correct, ',');
        out.correct[task].push_back(correct == "1" ? 1 : 0);
        out.keys[task].push_back(fold + ":" + id);
    }
    return out;
}

}  // namespace

int cmd_compare(const CommandOptions& opt) {
    const auto config = load_config(opt);
    if (opt.run_a.empty() || opt.run_b.empty()) {
        throw ConfigError("compare requires --run-a and --run-b");
    }
    const std::string name_a = fs::path(opt.run_a).filename().string();
    const std::string name_b = fs::path(opt.run_b).filename().string();
    const std::string run_dir =
        run_dir_for(config, opt, "compare-" + name_a + "-vs-" + name_b + "-" + opt.test_kind);
    start_run_dir(run_dir, opt.force);

    if (opt.test_kind == "utest") {
        const auto a = read_report_samples(opt.run_a);
        const auto b = read_report_samples(opt.run_b);
        RunSamples ra{name_a, a.accuracy, {}};
        RunSamples rb{name_b, b.accuracy, {}};
        const auto acc_rows = compare_runs({ra, rb}, PairedTest::UTest, 0.05);
        RunSamples ga{name_a, a.gf1, {}};
        RunSamples gb{name_b, b.gf1, {}};
        const auto gf1_rows = compare_runs({ga, gb}, PairedTest::UTest, 0.05);
        write_text((fs::path(run_dir) / "comparison_accuracy.csv").string(),
                   comparison_csv(acc_rows));
        write_text((fs::path(run_dir) / "comparison_accuracy.md").string(),
                   comparison_markdown(acc_rows));
        write_text((fs::path(run_dir) / "comparison_gf1.csv").string(),
                   comparison_csv(gf1_rows));
        write_text((fs::path(run_dir) / "comparison_gf1.md").string(),
                   comparison_markdown(gf1_rows));
    } else if (opt.test_kind == "mcnemar") {
        const auto a = read_item_correct(opt.run_a);
        const auto b = read_item_correct(opt.run_b);
        std::vector<ComparisonRow> rows;
        for (const auto& task : FieldTask::all()) {
            const std::string key = to_string(task.kind);
            if (!a.correct.count(key) || !b.correct.count(key)) {
                throw std::runtime_error("task " + key + " missing from one of the runs");
            }
            if (a.keys.at(key) != b.keys.at(key)) {
                throw std::runtime_error("item sets differ for task " + key +
                                         "; runs must share folds and corpus");
            }
            RunSamples ra{name_a + ":" + key, {}, a.correct.at(key)};
            RunSamples rb{name_b + ":" + key, {}, b.correct.at(key)};
            const auto task_rows = compare_runs({ra, rb}, PairedTest::McNemar, 0.05);
            rows.insert(rows.end(), task_rows.begin(), task_rows.end());
        }
        write_text((fs::path(run_dir) / "comparison_mcnemar.csv").string(),
                   comparison_csv(rows));
        write_text((fs::path(run_dir) / "comparison_mcnemar.md").string(),
                   comparison_markdown(rows));
    } else {
        throw ConfigError("unknown --test (expected utest or mcnemar): " + opt.test_kind);
    }
    std::cout << "compared " << name_a << " vs " << name_b << " (" << opt.test_kind << ") -> "
              << run_dir << "\n";

    write_manifest(run_dir, "compare", config,
                   {{"run_a_manifest", (fs::path(opt.run_a) / "manifest.json").string()},
                    {"run_b_manifest", (fs::path(opt.run_b) / "manifest.json").string()}},
                   {});
    return 0;
}

int cmd_sweep(const CommandOptions& opt) {
    const auto config = load_config(opt);
    const std::string run_dir = run_dir_for(config, opt, "sweep");
    start_run_dir(run_dir, opt.force);

    const auto corpus = load_corpus_checked(config.paths.corpus);
    const Vocab vocab = load_vocab_checked(config.paths.vocab);
    std::string base_path;
    const Model<float> base = load_base_checked(config, vocab, &base_path);

    const auto cfg = experiment_configs(config);
    const auto rows =
        run_sweep(corpus, config.experiment.sequence_length_grid, base, vocab, cfg,
                  config.experiment.sweep_test_fraction, config.experiment.seed);

    std::ostringstream csv;
    csv << "task,seq_len,section,n,accuracy,gf1\n";
    std::ostringstream md;
    md << "# Sequence-length sweep (field extraction with segmentation)\n\n";
    md << "| Task | Section Used | Max Seq | Acc. (G.F1) |\n|---|---|---|---|\n";
    for (const auto& row : rows) {
        const auto& task = FieldTask::get(row.task);
        csv << to_string(row.task) << ',' << row.seq_len << ','
            << to_string(task.routed_section) << ',' << row.n_test << ','
            << fmt(row.accuracy) << ',' << fmt(row.gf1) << '\n';
        char line[200];
        std::snprintf(line, sizeof(line), "| %s | %s | %d | %.1f%% (%.1f%%) |\n",
                      to_string(row.task), to_string(task.routed_section), row.seq_len,
                      100.0 * row.accuracy, 100.0 * row.gf1);
        md << line;
    }
    write_text((fs::path(run_dir) / "grid.csv").string(), csv.str());
    write_text((fs::path(run_dir) / "grid.md").string(), md.str());
    std::cout << "sweep wrote " << rows.size() << " rows -> " << run_dir << "\n";

    write_manifest(run_dir, "sweep", config,
                   {{"corpus", config.paths.corpus},
                    {"vocab", config.paths.vocab},
                    {"base_checkpoint", base_path}},
                   {{"grid", (fs::path(run_dir) / "grid.csv").string()}});
    return 0;
}

}  // namespace radreport
