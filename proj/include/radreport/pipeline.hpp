#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "radreport/corpus.hpp"
#include "radreport/evalstat.hpp"
#include "radreport/training.hpp"

namespace radreport {

enum class FieldTaskKind : int {
    Modality = 0,
    PreviousCancer = 1,
    MenopausalStatus = 2,
    Purpose = 3,
    Density = 4,
    Bpe = 5,
};
constexpr int kNumFieldTasks = 6;

const char* to_string(FieldTaskKind kind);
FieldTaskKind field_task_from_string(const std::string& name);

// A field-extraction task: its class set, the section its evidence lives
// in, and the input length used when classifying that section.
struct FieldTask {
    FieldTaskKind kind;
    SectionLabel routed_section;
    int32_t default_seq_len;
    std::vector<std::string> class_names;
    int32_t absent_class;  // prediction when the routed section is missing

    int32_t n_classes() const { return static_cast<int32_t>(class_names.size()); }
    int32_t gold_label(const FieldLabels& fields) const;

    static const FieldTask& get(FieldTaskKind kind);
    static const std::vector<FieldTask>& all();
};

struct SegmentedReport {
    std::string report_id;
    std::vector<int32_t> labels;        // predicted section per sentence
    std::vector<double> probabilities;  // winning class probability
    // sentence indices grouped by predicted section, in document order
    std::vector<std::vector<int64_t>> groups;

    bool empty() const { return labels.empty(); }
};

// Classifies a report's sentences in document order. With `use_aux`, the
// previous-sentence feature is the model's own prediction (greedy
// sequential decoding); without, sentences are classified independently.
SegmentedReport segment_report(const LabeledReport& report, const Model<float>& seg_model,
                               const Vocab& vocab, bool use_aux, int32_t seq_len = 32);

// Field extraction for one report. With a segmentation, the sentences
// predicted as the task's routed section are concatenated in document
// order and truncated to the task's sequence length; a missing routed
// section short-circuits to the task's absent class. Without one, the
// whole report text is classified at `whole_report_seq_len`.
int32_t extract_field(const LabeledReport& report, const FieldTask& task,
                      const Model<float>& model, const Vocab& vocab,
                      const SegmentedReport* segmented, int32_t whole_report_seq_len = 512);

// ---------------------------------------------------------------------------
// dataset builders

TaskDataset build_segmentation_dataset(const std::vector<const LabeledReport*>& reports,
                                       const Vocab& vocab, int32_t seq_len, bool with_aux);

// Gold-routed section text (reports whose routed section is absent are
// skipped, matching the reduced per-task dataset sizes of the protocol).
TaskDataset build_field_dataset_routed(const std::vector<const LabeledReport*>& reports,
                                       const FieldTask& task, const Vocab& vocab,
                                       int32_t seq_len);

// Whole-text variant over all reports.
TaskDataset build_field_dataset_whole(const std::vector<const LabeledReport*>& reports,
                                      const FieldTask& task, const Vocab& vocab,
                                      int32_t seq_len);

// Segmenter training honoring TrainConfig::aux_prev_source (gold teacher
// forcing, the model's own predictions, or a scheduled mix).
Model<float> train_segmenter(const std::vector<const LabeledReport*>& reports,
                             const Model<float>& base, const Vocab& vocab,
                             const TrainConfig& config, int32_t seq_len, bool with_aux,
                             TrainLog& log);

// ---------------------------------------------------------------------------
// experiments

enum class ExperimentVariant { SegAux, SegNoAux, FieldSeg, FieldNoSeg };

const char* to_string(ExperimentVariant v);
ExperimentVariant variant_from_string(const std::string& name);

struct ExperimentConfigs {
    TrainConfig finetune;        // protocol for every fine-tuned model
    int32_t seg_seq_len = 32;
    int32_t noseg_seq_len = 512;
    double ablation_fraction = 1.0;  // fraction of each fold's training reports
};

struct SegFoldResult {
    EvalReport sentences;                 // pooled sentence-level metrics
    std::vector<std::string> report_ids;  // per test report, aligned below
    std::vector<double> report_accuracy;
    std::vector<double> report_gf1;
    std::vector<int32_t> preds, golds;    // pooled sentence-level
    std::vector<SegmentedReport> segmented;
};

struct FieldFoldResult {
    std::vector<std::string> report_ids;  // test reports, aligned per task
    std::map<FieldTaskKind, EvalReport> by_task;
    std::map<FieldTaskKind, std::vector<int32_t>> preds;
    std::map<FieldTaskKind, std::vector<int32_t>> golds;
};

struct ExperimentResult {
    ExperimentVariant variant;
    std::vector<SegFoldResult> seg_folds;
    std::vector<FieldFoldResult> field_folds;
};

// Fine-tunes on each fold's training split (optionally ablated) from the
// shared pre-trained base and evaluates on the fold's test split.
ExperimentResult run_experiment(const std::vector<LabeledReport>& corpus,
                                const std::vector<FoldSplit>& folds, ExperimentVariant variant,
                                const Model<float>& base, const Vocab& vocab,
                                const ExperimentConfigs& cfg, int jobs = 1);

// One Appendix-A-style sweep row.
struct SweepRow {
    FieldTaskKind task;
    int32_t seq_len;
    double accuracy;
    double gf1;
    int64_t n_test;
};

// Task-by-sequence-length grid on a single stratified split: a segmenter
// is trained once, extractors are retrained per (task, length).
std::vector<SweepRow> run_sweep(const std::vector<LabeledReport>& corpus,
                                const std::vector<int32_t>& grid, const Model<float>& base,
                                const Vocab& vocab, const ExperimentConfigs& cfg,
                                double test_fraction, uint64_t split_seed);

}  // namespace radreport
