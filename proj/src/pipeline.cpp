#include "radreport/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace radreport {

const char* to_string(FieldTaskKind kind) {
    switch (kind) {
        case FieldTaskKind::Modality: return "modality";
        case FieldTaskKind::PreviousCancer: return "previous_cancer";
        case FieldTaskKind::MenopausalStatus: return "menopausal";
        case FieldTaskKind::Purpose: return "purpose";
        case FieldTaskKind::Density: return "density";
        case FieldTaskKind::Bpe: return "bpe";
    }
    return "?";
}

FieldTaskKind field_task_from_string(const std::string& name) {
    for (int i = 0; i < kNumFieldTasks; ++i) {
        const auto kind = static_cast<FieldTaskKind>(i);
        if (name == to_string(kind)) return kind;
    }
    throw std::invalid_argument("unknown field task: " + name);
}

namespace {

std::vector<std::string> enum_names(int count, const char* (*fn)(int)) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) out.push_back(fn(i));
    return out;
}

}  // namespace

const std::vector<FieldTask>& FieldTask::all() {
    static const std::vector<FieldTask> tasks = [] {
        std::vector<FieldTask> t;
        // Title is always present in gold data, but a predicted segmentation
        // can miss it; the fallback is the majority singleton class (MG).
        t.push_back({FieldTaskKind::Modality, SectionLabel::Title, 128, modality_class_set(),
                     0});
        t.push_back({FieldTaskKind::PreviousCancer, SectionLabel::HistoryClinicalIndication, 32,
                     enum_names(3, [](int i) { return to_string(static_cast<PreviousCancer>(i)); }),
                     static_cast<int32_t>(PreviousCancer::No)});
        t.push_back({FieldTaskKind::MenopausalStatus, SectionLabel::HistoryClinicalIndication,
                     128,
                     enum_names(3, [](int i) { return to_string(static_cast<Menopausal>(i)); }),
                     static_cast<int32_t>(Menopausal::NotStated)});
        t.push_back({FieldTaskKind::Purpose, SectionLabel::HistoryClinicalIndication, 32,
                     enum_names(3, [](int i) { return to_string(static_cast<Purpose>(i)); }),
                     static_cast<int32_t>(Purpose::NotStated)});
        t.push_back({FieldTaskKind::Density, SectionLabel::FindingsProcedureNotes, 32,
                     enum_names(6, [](int i) { return to_string(static_cast<Density>(i)); }),
                     static_cast<int32_t>(Density::NotStated)});
        t.push_back({FieldTaskKind::Bpe, SectionLabel::FindingsProcedureNotes, 32,
                     enum_names(5, [](int i) { return to_string(static_cast<Bpe>(i)); }),
                     static_cast<int32_t>(Bpe::NotStated)});
        return t;
    }();
    return tasks;
}

const FieldTask& FieldTask::get(FieldTaskKind kind) {
    return all()[static_cast<size_t>(kind)];
}

int32_t FieldTask::gold_label(const FieldLabels& fields) const {
    switch (kind) {
        case FieldTaskKind::Modality: {
            const auto& classes = modality_class_set();
            for (size_t i = 0; i < classes.size(); ++i) {
                if (classes[i] == fields.modality) return static_cast<int32_t>(i);
            }
            throw std::invalid_argument("modality not in the class set: " + fields.modality);
        }
        case FieldTaskKind::PreviousCancer: return static_cast<int32_t>(fields.previous_cancer);
        case FieldTaskKind::MenopausalStatus: return static_cast<int32_t>(fields.menopausal);
        case FieldTaskKind::Purpose: return static_cast<int32_t>(fields.purpose);
        case FieldTaskKind::Density: return static_cast<int32_t>(fields.density);
        case FieldTaskKind::Bpe: return static_cast<int32_t>(fields.bpe);
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// inference

namespace {

std::string sentence_text(const LabeledReport& report, size_t index) {
    const auto& s = report.sentences[index];
    return report.text.substr(static_cast<size_t>(s.begin),
                              static_cast<size_t>(s.end - s.begin));
}

}  // namespace

SegmentedReport segment_report(const LabeledReport& report, const Model<float>& seg_model,
                               const Vocab& vocab, bool use_aux, int32_t seq_len) {
    SegmentedReport out;
    out.report_id = report.report_id;
    out.groups.assign(kNumSections, {});
    const auto n = static_cast<int32_t>(report.sentences.size());
    if (n == 0) return out;

    if (use_aux != seg_model.aux.has_value()) {
        throw std::invalid_argument("segmenter and use_aux flag disagree about aux features");
    }

    if (!use_aux) {
        Batch batch;
        for (size_t i = 0; i < report.sentences.size(); ++i) {
            batch.append(encode(sentence_text(report, i), vocab, seq_len));
        }
        ClassifyState<float> state;
        model_classify_forward(seg_model, batch, nullptr, false, nullptr, state);
        for (int64_t i = 0; i < state.probs.rows(); ++i) {
            const float* row = state.probs.data() + i * state.probs.cols();
            const int32_t label = argmax_class(row, state.probs.cols());
            out.labels.push_back(label);
            out.probabilities.push_back(static_cast<double>(row[label]));
        }
    } else {
        // greedy sequential decoding: the predicted label of sentence i-1
        // feeds the aux features of sentence i
        ClassifyState<float> state;
        for (int32_t i = 0; i < n; ++i) {
            Batch batch;
            batch.append(encode(sentence_text(report, static_cast<size_t>(i)), vocab, seq_len));
            const std::vector<AuxFeatures> aux = {
                {i == 0 ? -1 : out.labels.back(), i, n}};
            model_classify_forward(seg_model, batch, &aux, false, nullptr, state);
            const float* row = state.probs.data();
            const int32_t label = argmax_class(row, state.probs.cols());
            out.labels.push_back(label);
            out.probabilities.push_back(static_cast<double>(row[label]));
        }
    }

    for (size_t i = 0; i < out.labels.size(); ++i) {
        out.groups[static_cast<size_t>(out.labels[i])].push_back(static_cast<int64_t>(i));
    }
    return out;
}

int32_t extract_field(const LabeledReport& report, const FieldTask& task,
                      const Model<float>& model, const Vocab& vocab,
                      const SegmentedReport* segmented, int32_t whole_report_seq_len) {
    std::string text;
    int32_t seq_len;
    if (segmented != nullptr) {
        const auto& indices = segmented->groups[static_cast<size_t>(task.routed_section)];
        if (indices.empty()) return task.absent_class;
        for (size_t i = 0; i < indices.size(); ++i) {
            if (i > 0) text += ' ';
            text += sentence_text(report, static_cast<size_t>(indices[i]));
        }
        seq_len = task.default_seq_len;
    } else {
        text = report.text;
        seq_len = whole_report_seq_len;
    }
    Batch batch;
    batch.append(encode(text, vocab, seq_len));
    ClassifyState<float> state;
    model_classify_forward(model, batch, nullptr, false, nullptr, state);
    return argmax_class(state.probs.data(), state.probs.cols());
}

// ---------------------------------------------------------------------------
// dataset builders

TaskDataset build_segmentation_dataset(const std::vector<const LabeledReport*>& reports,
                                       const Vocab& vocab, int32_t seq_len, bool with_aux) {
    TaskDataset data;
    data.n_classes = kNumSections;
    data.with_aux = with_aux;
    for (const auto* r : reports) {
        const auto total = static_cast<int32_t>(r->sentences.size());
        for (int32_t i = 0; i < total; ++i) {
            TaskExample ex;
            ex.tokens = encode(sentence_text(*r, static_cast<size_t>(i)), vocab, seq_len);
            ex.label = static_cast<int32_t>(r->sentences[static_cast<size_t>(i)].label);
            if (with_aux) {
                ex.aux.prev_label =
                    i == 0 ? -1
                           : static_cast<int>(r->sentences[static_cast<size_t>(i - 1)].label);
                ex.aux.sentence_index = i;
                ex.aux.total_sentences = total;
            }
            data.items.push_back(std::move(ex));
        }
    }
    return data;
}

namespace {

std::string gold_section_text(const LabeledReport& report, SectionLabel section) {
    std::string text;
    for (size_t i = 0; i < report.sentences.size(); ++i) {
        if (report.sentences[i].label != section) continue;
        if (!text.empty()) text += ' ';
        text += sentence_text(report, i);
    }
    return text;
}

}  // namespace

TaskDataset build_field_dataset_routed(const std::vector<const LabeledReport*>& reports,
                                       const FieldTask& task, const Vocab& vocab,
                                       int32_t seq_len) {
    TaskDataset data;
    data.n_classes = task.n_classes();
    for (const auto* r : reports) {
        const std::string text = gold_section_text(*r, task.routed_section);
        if (text.empty()) continue;  // the protocol trains on reports having the section
        TaskExample ex;
        ex.tokens = encode(text, vocab, seq_len);
        ex.label = task.gold_label(r->fields);
        data.items.push_back(std::move(ex));
    }
    return data;
}

TaskDataset build_field_dataset_whole(const std::vector<const LabeledReport*>& reports,
                                      const FieldTask& task, const Vocab& vocab,
                                      int32_t seq_len) {
    TaskDataset data;
    data.n_classes = task.n_classes();
    for (const auto* r : reports) {
        TaskExample ex;
        ex.tokens = encode(r->text, vocab, seq_len);
        ex.label = task.gold_label(r->fields);
        data.items.push_back(std::move(ex));
    }
    return data;
}

// ---------------------------------------------------------------------------
// segmenter training with the aux-source switch

namespace {

// Re-materialize aux features from the model's own greedy predictions.
void predicted_aux_pass(const std::vector<const LabeledReport*>& reports,
                        const Model<float>& model, const Vocab& vocab, int32_t seq_len,
                        TaskDataset& data) {
    size_t cursor = 0;
    for (const auto* r : reports) {
        const auto seg = segment_report(*r, model, vocab, true, seq_len);
        for (size_t i = 0; i < r->sentences.size(); ++i, ++cursor) {
            data.items[cursor].aux.prev_label = i == 0 ? -1 : seg.labels[i - 1];
        }
    }
}

}  // namespace

Model<float> train_segmenter(const std::vector<const LabeledReport*>& reports,
                             const Model<float>& base, const Vocab& vocab,
                             const TrainConfig& config, int32_t seq_len, bool with_aux,
                             TrainLog& log) {
    TaskDataset data = build_segmentation_dataset(reports, vocab, seq_len, with_aux);
    if (!with_aux || config.aux_prev_source == AuxPrevSource::Gold) {
        return finetune(data, base, config, log);
    }

    // Predicted / Scheduled: gold teacher forcing is re-materialized from
    // the model's own greedy decoding between epochs.
    config.validate();
    Model<float> model;
    model.config = base.config;
    model.encoder = base.encoder;
    model.aux = init_aux_encoder<float>(config.seed ^ 0x9e3779b9ULL);
    model.head = init_classifier<float>(base.config.hidden_dim + kAuxOutputDim, kNumSections,
                                        config.seed);
    Model<float> grads = model.like();
    auto params = model.named_params(&grads);
    AdamW<float> opt(config.weight_decay, config.grad_clip);
    opt.init(params);
    Rng rng(config.seed + 1);

    const TaskDataset gold_data = data;  // pristine gold aux copy
    std::vector<size_t> order(data.items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int64_t batches_per_epoch =
        (static_cast<int64_t>(order.size()) + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = static_cast<int64_t>(config.epochs) * batches_per_epoch;
    int64_t step = 0;
    ClassifyState<float> state;  // reused across steps

    for (int32_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double predicted_share =
            config.aux_prev_source == AuxPrevSource::Predicted
                ? 1.0
                : static_cast<double>(epoch) / std::max(1, config.epochs - 1);
        data = gold_data;
        if (predicted_share > 0.0) {
            TaskDataset predicted = gold_data;
            predicted_aux_pass(reports, model, vocab, seq_len, predicted);
            for (size_t i = 0; i < data.items.size(); ++i) {
                if (rng.bernoulli(predicted_share)) {
                    data.items[i].aux = predicted.items[i].aux;
                }
            }
        }

        rng.shuffle(order);
        for (size_t begin = 0; begin < order.size();
             begin += static_cast<size_t>(config.batch_size)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
            Batch batch;
            std::vector<AuxFeatures> aux;
            std::vector<int32_t> gold;
            for (size_t i = begin; i < end; ++i) {
                const auto& ex = data.items[order[i]];
                batch.append(ex.tokens);
                aux.push_back(ex.aux);
                gold.push_back(ex.label);
            }
            model_classify_forward(model, batch, &aux, true, &rng, state);
            for (auto& p : params) p.grad->zero();
            const double loss = model_classify_backward(model, state, gold, grads);
            if (!std::isfinite(loss)) throw TrainError("segmenter loss is not finite", step);
            const double lr =
                lr_at_step(step, total_steps, config.learning_rate, config.warmup_fraction);
            opt.step(params, lr);
            log.entries.push_back({step, loss, lr});
            ++step;
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// experiments

const char* to_string(ExperimentVariant v) {
    switch (v) {
        case ExperimentVariant::SegAux: return "seg-aux";
        case ExperimentVariant::SegNoAux: return "seg-noaux";
        case ExperimentVariant::FieldSeg: return "field-seg";
        case ExperimentVariant::FieldNoSeg: return "field-noseg";
    }
    return "?";
}

ExperimentVariant variant_from_string(const std::string& name) {
    for (auto v : {ExperimentVariant::SegAux, ExperimentVariant::SegNoAux,
                   ExperimentVariant::FieldSeg, ExperimentVariant::FieldNoSeg}) {
        if (name == to_string(v)) return v;
    }
    throw std::invalid_argument("unknown experiment variant: " + name);
}

namespace {

std::vector<const LabeledReport*> select_reports(const std::vector<LabeledReport>& corpus,
                                                 const std::vector<int64_t>& ids) {
    std::vector<const LabeledReport*> out;
    out.reserve(ids.size());
    for (int64_t id : ids) out.push_back(&corpus[static_cast<size_t>(id)]);
    return out;
}

// Ablation keeps ceil(fraction * n) training reports, chosen by a seeded
// shuffle so different fractions nest deterministically.
std::vector<const LabeledReport*> ablate(std::vector<const LabeledReport*> reports,
                                         double fraction, uint64_t seed) {
    if (fraction >= 1.0) return reports;
    const auto keep = static_cast<size_t>(
        std::ceil(fraction * static_cast<double>(reports.size())));
    Rng rng(seed ^ 0xab1a7e);
    rng.shuffle(reports);
    reports.resize(std::max<size_t>(1, keep));
    return reports;
}

SegFoldResult run_seg_fold(const std::vector<LabeledReport>& corpus, const FoldSplit& fold,
                           bool with_aux, const Model<float>& base, const Vocab& vocab,
                           const ExperimentConfigs& cfg, uint64_t fold_seed) {
    auto train_reports =
        ablate(select_reports(corpus, fold.train_ids), cfg.ablation_fraction, fold_seed);
    TrainConfig tc = cfg.finetune;
    tc.seed = fold_seed;

    TrainLog log;
    const Model<float> model =
        train_segmenter(train_reports, base, vocab, tc, cfg.seg_seq_len, with_aux, log);

    SegFoldResult result;
    for (int64_t id : fold.test_ids) {
        const auto& report = corpus[static_cast<size_t>(id)];
        const auto seg = segment_report(report, model, vocab, with_aux, cfg.seg_seq_len);
        std::vector<int32_t> preds, golds;
        for (size_t i = 0; i < report.sentences.size(); ++i) {
            preds.push_back(seg.labels[i]);
            golds.push_back(static_cast<int32_t>(report.sentences[i].label));
        }
        result.report_ids.push_back(report.report_id);
        result.report_accuracy.push_back(accuracy(preds, golds));
        result.report_gf1.push_back(generalized_f1(preds, golds, kNumSections));
        result.preds.insert(result.preds.end(), preds.begin(), preds.end());
        result.golds.insert(result.golds.end(), golds.begin(), golds.end());
        result.segmented.push_back(seg);
    }
    result.sentences = evaluate_predictions(result.preds, result.golds, kNumSections);
    return result;
}

FieldFoldResult run_field_fold(const std::vector<LabeledReport>& corpus, const FoldSplit& fold,
                               bool with_seg, const Model<float>& base, const Vocab& vocab,
                               const ExperimentConfigs& cfg, uint64_t fold_seed) {
    auto train_reports =
        ablate(select_reports(corpus, fold.train_ids), cfg.ablation_fraction, fold_seed);
    const auto test_reports = select_reports(corpus, fold.test_ids);

    FieldFoldResult result;
    for (const auto* r : test_reports) result.report_ids.push_back(r->report_id);

    std::vector<SegmentedReport> segmented;
    if (with_seg) {
        TrainConfig seg_tc = cfg.finetune;
        seg_tc.seed = fold_seed ^ 0x5e9;
        TrainLog seg_log;
        const Model<float> segmenter = train_segmenter(train_reports, base, vocab, seg_tc,
                                                       cfg.seg_seq_len, true, seg_log);
        for (const auto* r : test_reports) {
            segmented.push_back(segment_report(*r, segmenter, vocab, true, cfg.seg_seq_len));
        }
    }

    for (const auto& task : FieldTask::all()) {
        TrainConfig tc = cfg.finetune;
        tc.seed = fold_seed ^ (0x100 + static_cast<uint64_t>(task.kind));

        const TaskDataset data =
            with_seg
                ? build_field_dataset_routed(train_reports, task, vocab, task.default_seq_len)
                : build_field_dataset_whole(train_reports, task, vocab, cfg.noseg_seq_len);
        TrainLog log;
        const Model<float> model = finetune(data, base, tc, log);

        std::vector<int32_t> preds, golds;
        for (size_t i = 0; i < test_reports.size(); ++i) {
            preds.push_back(extract_field(*test_reports[i], task, model, vocab,
                                          with_seg ? &segmented[i] : nullptr,
                                          cfg.noseg_seq_len));
            golds.push_back(task.gold_label(test_reports[i]->fields));
        }
        result.by_task[task.kind] = evaluate_predictions(preds, golds, task.n_classes());
        result.preds[task.kind] = std::move(preds);
        result.golds[task.kind] = std::move(golds);
    }
    return result;
}

}  // namespace

ExperimentResult run_experiment(const std::vector<LabeledReport>& corpus,
                                const std::vector<FoldSplit>& folds, ExperimentVariant variant,
                                const Model<float>& base, const Vocab& vocab,
                                const ExperimentConfigs& cfg, int jobs) {
    ExperimentResult result;
    result.variant = variant;
    const bool is_seg =
        variant == ExperimentVariant::SegAux || variant == ExperimentVariant::SegNoAux;
    if (is_seg) {
        result.seg_folds.resize(folds.size());
    } else {
        result.field_folds.resize(folds.size());
    }

    auto run_one = [&](size_t f) {
        const uint64_t fold_seed = cfg.finetune.seed + 1000 * (f + 1);
        switch (variant) {
            case ExperimentVariant::SegAux:
                result.seg_folds[f] =
                    run_seg_fold(corpus, folds[f], true, base, vocab, cfg, fold_seed);
                break;
            case ExperimentVariant::SegNoAux:
                result.seg_folds[f] =
                    run_seg_fold(corpus, folds[f], false, base, vocab, cfg, fold_seed);
                break;
            case ExperimentVariant::FieldSeg:
                result.field_folds[f] =
                    run_field_fold(corpus, folds[f], true, base, vocab, cfg, fold_seed);
                break;
            case ExperimentVariant::FieldNoSeg:
                result.field_folds[f] =
                    run_field_fold(corpus, folds[f], false, base, vocab, cfg, fold_seed);
                break;
        }
    };

    if (jobs <= 1 || folds.size() <= 1) {
        for (size_t f = 0; f < folds.size(); ++f) run_one(f);
    } else {
        // folds are independent; results land in pre-sized slots
        std::vector<std::thread> workers;
        std::atomic<size_t> next{0};
        const size_t n_workers = std::min<size_t>(static_cast<size_t>(jobs), folds.size());
        for (size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&] {
                for (;;) {
                    const size_t f = next.fetch_add(1);
                    if (f >= folds.size()) return;
                    run_one(f);
                }
            });
        }
        for (auto& t : workers) t.join();
    }
    return result;
}

std::vector<SweepRow> run_sweep(const std::vector<LabeledReport>& corpus,
                                const std::vector<int32_t>& grid, const Model<float>& base,
                                const Vocab& vocab, const ExperimentConfigs& cfg,
                                double test_fraction, uint64_t split_seed) {
    // single stratified split by modality
    std::vector<std::string> strata;
    for (const auto& r : corpus) strata.push_back(r.fields.modality);
    const int k = std::max(2, static_cast<int>(std::llround(1.0 / test_fraction)));
    const auto folds = stratified_kfold(static_cast<int64_t>(corpus.size()), k, strata,
                                        split_seed);
    const auto& split = folds[0];
    const auto train_reports = select_reports(corpus, split.train_ids);
    const auto test_reports = select_reports(corpus, split.test_ids);

    TrainConfig seg_tc = cfg.finetune;
    seg_tc.seed = cfg.finetune.seed ^ 0x5eed;
    TrainLog seg_log;
    const Model<float> segmenter =
        train_segmenter(train_reports, base, vocab, seg_tc, cfg.seg_seq_len, true, seg_log);
    std::vector<SegmentedReport> segmented;
    for (const auto* r : test_reports) {
        segmented.push_back(segment_report(*r, segmenter, vocab, true, cfg.seg_seq_len));
    }

    std::vector<SweepRow> rows;
    for (const auto& task : FieldTask::all()) {
        for (int32_t len : grid) {
            TrainConfig tc = cfg.finetune;
            tc.seed = cfg.finetune.seed ^ (0x900 + static_cast<uint64_t>(task.kind) * 16 +
                                           static_cast<uint64_t>(len));
            const TaskDataset data = build_field_dataset_routed(train_reports, task, vocab, len);
            TrainLog log;
            const Model<float> model = finetune(data, base, tc, log);

            FieldTask routed = task;
            routed.default_seq_len = len;
            std::vector<int32_t> preds, golds;
            for (size_t i = 0; i < test_reports.size(); ++i) {
                preds.push_back(extract_field(*test_reports[i], routed, model, vocab,
                                              &segmented[i], cfg.noseg_seq_len));
                golds.push_back(task.gold_label(test_reports[i]->fields));
            }
            const auto report = evaluate_predictions(preds, golds, task.n_classes());
            rows.push_back({task.kind, len, report.accuracy, report.gf1,
                            static_cast<int64_t>(test_reports.size())});
        }
    }
    return rows;
}

}  // namespace radreport
