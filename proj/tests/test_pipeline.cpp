#include <set>

#include "doctest.h"
#include "radreport/pipeline.hpp"

using namespace radreport;

namespace {

// Shared tiny fixture: corpus, vocab, and a base encoder small enough for
// unit-test turnaround.
struct Fixture {
    std::vector<LabeledReport> corpus;
    Vocab vocab;
    Model<float> base;

    Fixture() : vocab(make_fixture_vocab()) {
        corpus = generate_corpus(CorpusSpec::defaults(40, 404));
        ModelConfig mc;
        mc.vocab_size = vocab.size();
        mc.max_seq_len = 64;
        mc.hidden_dim = 32;
        mc.n_layers = 1;
        mc.n_heads = 2;
        mc.ff_dim = 64;
        mc.dropout_rate = 0.0f;
        mc.seed = 12;
        base = make_pretrain_model<float>(mc);
    }

    static Vocab make_fixture_vocab() {
        std::vector<std::string> texts;
        for (const auto& r : generate_corpus(CorpusSpec::defaults(40, 404))) {
            texts.push_back(r.text);
        }
        return train_wordpiece(texts, 420, 1);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

Model<float> quick_segmenter(bool with_aux) {
    auto& f = fixture();
    std::vector<const LabeledReport*> train;
    for (size_t i = 0; i < 30; ++i) train.push_back(&f.corpus[i]);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 32;
    tc.learning_rate = 3e-4f;
    tc.validation_fraction = 0.0f;
    tc.seed = 99;
    TrainLog log;
    return train_segmenter(train, f.base, f.vocab, tc, 24, with_aux, log);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("routing table matches the protocol verbatim") {
    const auto& tasks = FieldTask::all();
    REQUIRE(tasks.size() == 6);

    auto expect = [&](FieldTaskKind kind, SectionLabel section, int32_t len) {
        const auto& t = FieldTask::get(kind);
        CHECK(t.routed_section == section);
        CHECK(t.default_seq_len == len);
    };
    expect(FieldTaskKind::Modality, SectionLabel::Title, 128);
    expect(FieldTaskKind::PreviousCancer, SectionLabel::HistoryClinicalIndication, 32);
    expect(FieldTaskKind::MenopausalStatus, SectionLabel::HistoryClinicalIndication, 128);
    expect(FieldTaskKind::Purpose, SectionLabel::HistoryClinicalIndication, 32);
    expect(FieldTaskKind::Density, SectionLabel::FindingsProcedureNotes, 32);
    expect(FieldTaskKind::Bpe, SectionLabel::FindingsProcedureNotes, 32);

    // absent-section predictions stay inside each task's label space
    for (const auto& t : tasks) {
        CHECK(t.absent_class >= 0);
        CHECK(t.absent_class < t.n_classes());
    }
    CHECK(FieldTask::get(FieldTaskKind::Purpose).absent_class ==
          static_cast<int32_t>(Purpose::NotStated));
    CHECK(FieldTask::get(FieldTaskKind::PreviousCancer).absent_class ==
          static_cast<int32_t>(PreviousCancer::No));
}

TEST_CASE("segment_report arity and boundary behavior") {
    auto& f = fixture();
    const auto model = quick_segmenter(true);

    SUBCASE("one label per sentence, groups partition the indices") {
        const auto& report = f.corpus[31];
        const auto seg = segment_report(report, model, f.vocab, true, 24);
        CHECK(seg.labels.size() == report.sentences.size());
        std::set<int64_t> seen;
        size_t total = 0;
        for (const auto& g : seg.groups) {
            total += g.size();
            seen.insert(g.begin(), g.end());
        }
        CHECK(total == report.sentences.size());
        CHECK(seen.size() == report.sentences.size());
    }
    SUBCASE("empty report gives an empty segmentation") {
        LabeledReport empty;
        empty.report_id = "E";
        const auto seg = segment_report(empty, model, f.vocab, true, 24);
        CHECK(seg.empty());
    }
    SUBCASE("single-sentence report decodes with prev = None") {
        LabeledReport one;
        one.report_id = "S";
        one.text = "BILATERAL MAMMOGRAM";
        one.sentences = {{0, 19, SectionLabel::Title}};
        const auto seg = segment_report(one, model, f.vocab, true, 24);
        REQUIRE(seg.labels.size() == 1);
    }
}

TEST_CASE("sequential decoding causality via prefix equality") {
    auto& f = fixture();
    const auto model = quick_segmenter(true);

    // two same-length reports sharing sentences 0..2 (sentence count is a
    // global aux feature, so lengths must match for the prefix property)
    const auto& base_report = f.corpus[33];
    REQUIRE(base_report.sentences.size() >= 4);
    LabeledReport altered = base_report;
    const auto& last = altered.sentences.back();
    // swap in different tail content of identical span layout
    std::string replaced(static_cast<size_t>(last.end - last.begin), 'x');
    std::string tail = "No significant change from prior.";
    tail.resize(replaced.size(), ' ');
    for (size_t i = 0; i < replaced.size(); ++i) {
        altered.text[static_cast<size_t>(last.begin) + i] = tail[i];
    }

    const auto seg_a = segment_report(base_report, model, f.vocab, true, 24);
    const auto seg_b = segment_report(altered, model, f.vocab, true, 24);
    for (size_t i = 0; i + 1 < base_report.sentences.size(); ++i) {
        CHECK(seg_a.labels[i] == seg_b.labels[i]);
    }
}

TEST_CASE("extract_field honors routing and the absent rule") {
    auto& f = fixture();
    const auto& task = FieldTask::get(FieldTaskKind::Purpose);

    // an extractor head; quality is irrelevant for the contract checks
    std::vector<const LabeledReport*> train;
    for (size_t i = 0; i < 25; ++i) train.push_back(&f.corpus[i]);
    const auto data = build_field_dataset_routed(train, task, f.vocab, task.default_seq_len);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.validation_fraction = 0.0f;
    tc.seed = 3;
    TrainLog log;
    const auto model = finetune(data, f.base, tc, log);

    SUBCASE("missing routed section short-circuits to the absent class") {
        SegmentedReport seg;
        seg.report_id = "X";
        seg.groups.assign(kNumSections, {});
        seg.labels = {static_cast<int32_t>(SectionLabel::Title)};
        seg.groups[0] = {0};  // Title only, no History
        LabeledReport r;
        r.report_id = "X";
        r.text = "BILATERAL MAMMOGRAM";
        r.sentences = {{0, 19, SectionLabel::Title}};
        CHECK(extract_field(r, task, model, f.vocab, &seg) ==
              static_cast<int32_t>(Purpose::NotStated));
    }
    SUBCASE("prediction is always inside the class set") {
        for (size_t i = 25; i < 35; ++i) {
            const auto pred = extract_field(f.corpus[i], task, model, f.vocab, nullptr, 64);
            CHECK(pred >= 0);
            CHECK(pred < task.n_classes());
        }
    }
}

TEST_CASE("routed training set sizes shrink to section coverage") {
    auto& f = fixture();
    std::vector<const LabeledReport*> all;
    for (const auto& r : f.corpus) all.push_back(&r);
    const auto& purpose = FieldTask::get(FieldTaskKind::Purpose);
    const auto routed = build_field_dataset_routed(all, purpose, f.vocab, 32);
    const auto whole = build_field_dataset_whole(all, purpose, f.vocab, 64);
    CHECK(whole.items.size() == f.corpus.size());
    size_t with_history = 0;
    for (const auto& r : f.corpus) {
        for (const auto& s : r.sentences) {
            if (s.label == SectionLabel::HistoryClinicalIndication) {
                ++with_history;
                break;
            }
        }
    }
    CHECK(routed.items.size() == with_history);
    CHECK(routed.items.size() < whole.items.size());
}

TEST_CASE("run_experiment arity and ablation arithmetic") {
    auto& f = fixture();
    std::vector<std::string> strata;
    for (const auto& r : f.corpus) strata.push_back(r.fields.modality);
    const auto folds =
        stratified_kfold(static_cast<int64_t>(f.corpus.size()), 4, strata, 7, nullptr);

    ExperimentConfigs cfg;
    cfg.finetune.epochs = 1;
    cfg.finetune.batch_size = 32;
    cfg.finetune.validation_fraction = 0.0f;
    cfg.finetune.seed = 5;
    cfg.seg_seq_len = 24;
    cfg.noseg_seq_len = 48;

    const auto result =
        run_experiment(f.corpus, folds, ExperimentVariant::SegNoAux, f.base, f.vocab, cfg);
    CHECK(result.seg_folds.size() == 4);  // one EvalReport per fold
    for (const auto& fold : result.seg_folds) {
        CHECK(fold.sentences.n_items > 0);
        CHECK(fold.report_accuracy.size() == fold.report_ids.size());
    }
}

TEST_CASE("seg-aux experiment runs and parallel fold execution matches serial") {
    auto& f = fixture();
    std::vector<std::string> strata;
    for (const auto& r : f.corpus) strata.push_back(r.fields.modality);
    const auto folds =
        stratified_kfold(static_cast<int64_t>(f.corpus.size()), 2, strata, 7, nullptr);

    ExperimentConfigs cfg;
    cfg.finetune.epochs = 1;
    cfg.finetune.batch_size = 32;
    cfg.finetune.validation_fraction = 0.0f;
    cfg.finetune.seed = 5;
    cfg.seg_seq_len = 24;

    const auto serial =
        run_experiment(f.corpus, folds, ExperimentVariant::SegAux, f.base, f.vocab, cfg, 1);
    const auto parallel =
        run_experiment(f.corpus, folds, ExperimentVariant::SegAux, f.base, f.vocab, cfg, 2);
    REQUIRE(serial.seg_folds.size() == parallel.seg_folds.size());
    for (size_t i = 0; i < serial.seg_folds.size(); ++i) {
        CHECK(serial.seg_folds[i].preds == parallel.seg_folds[i].preds);
        CHECK(serial.seg_folds[i].sentences.accuracy ==
              parallel.seg_folds[i].sentences.accuracy);
    }
}

}  // TEST_SUITE
