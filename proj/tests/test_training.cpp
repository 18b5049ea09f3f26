#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "radreport/checkpoint.hpp"
#include "radreport/training.hpp"

using namespace radreport;

namespace {

Vocab toy_vocab(int n_plain) {
    std::vector<std::string> tokens = Vocab::special_tokens();
    for (int i = 0; i < n_plain; ++i) tokens.push_back("tok" + std::to_string(i));
    return make_vocab(std::move(tokens));
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning-rate schedule peaks at the warmup boundary and ends at zero") {
    const int64_t total = 100;
    const double peak = 5e-5;
    const int64_t warmup = 10;  // fraction 0.1

    CHECK(lr_at_step(warmup - 1, total, peak, 0.1) == doctest::Approx(peak));
    CHECK(lr_at_step(total - 1, total, peak, 0.1) == doctest::Approx(0.0));
    for (int64_t s = 1; s < warmup; ++s) {
        CHECK(lr_at_step(s, total, peak, 0.1) > lr_at_step(s - 1, total, peak, 0.1));
    }
    for (int64_t s = warmup; s < total; ++s) {
        CHECK(lr_at_step(s, total, peak, 0.1) < lr_at_step(s - 1, total, peak, 0.1) + 1e-15);
    }
}

TEST_CASE("mask_tokens basics") {
    const Vocab vocab = toy_vocab(200);
    TokenSequence seq;
    seq.ids = {Vocab::kCls, 10, 11, 12, 13, 14, Vocab::kSep, Vocab::kPad};
    seq.attention_mask = {1, 1, 1, 1, 1, 1, 1, 0};

    SUBCASE("mask_prob zero is the identity with all-ignore targets") {
        Rng rng(1);
        TokenSequence masked;
        std::vector<int32_t> targets;
        mask_tokens(seq, vocab, 0.0f, rng, masked, targets);
        CHECK(masked.ids == seq.ids);
        for (auto t : targets) CHECK(t == kIgnoreTarget);
    }
    SUBCASE("specials are never selected") {
        Rng rng(2);
        TokenSequence masked;
        std::vector<int32_t> targets;
        for (int trial = 0; trial < 10000; ++trial) {
            mask_tokens(seq, vocab, 0.5f, rng, masked, targets);
            CHECK(targets[0] == kIgnoreTarget);
            CHECK(targets[6] == kIgnoreTarget);
            CHECK(targets[7] == kIgnoreTarget);
            CHECK(masked.ids[0] == Vocab::kCls);
            CHECK(masked.ids[6] == Vocab::kSep);
            CHECK(masked.ids[7] == Vocab::kPad);
        }
    }
    SUBCASE("selection rate and 80/10/10 split over a large sample") {
        // Monte Carlo oracle with a fixed seed: ~1e5 candidate positions.
        Rng rng(42);
        TokenSequence big;
        const int n = 200;
        big.ids.assign(n, 0);
        big.attention_mask.assign(n, 1);
        for (int i = 0; i < n; ++i) {
            big.ids[static_cast<size_t>(i)] =
                Vocab::kNumSpecials + static_cast<int32_t>((i * 37) % 200);
        }
        int64_t candidates = 0, selected = 0, to_mask = 0, changed = 0, kept = 0;
        TokenSequence masked;
        std::vector<int32_t> targets;
        for (int trial = 0; trial < 500; ++trial) {
            mask_tokens(big, vocab, 0.15f, rng, masked, targets);
            candidates += n;
            for (int i = 0; i < n; ++i) {
                if (targets[static_cast<size_t>(i)] == kIgnoreTarget) continue;
                ++selected;
                if (masked.ids[static_cast<size_t>(i)] == Vocab::kMask) {
                    ++to_mask;
                } else if (masked.ids[static_cast<size_t>(i)] ==
                           big.ids[static_cast<size_t>(i)]) {
                    ++kept;
                } else {
                    ++changed;
                }
            }
        }
        const double rate = static_cast<double>(selected) / static_cast<double>(candidates);
        CHECK(std::abs(rate - 0.15) <= 0.01);
        const double f_mask = static_cast<double>(to_mask) / static_cast<double>(selected);
        const double f_changed = static_cast<double>(changed) / static_cast<double>(selected);
        const double f_kept = static_cast<double>(kept) / static_cast<double>(selected);
        CHECK(std::abs(f_mask - 0.8) <= 0.02);
        CHECK(std::abs(f_changed - 0.1) <= 0.02);
        CHECK(std::abs(f_kept - 0.1) <= 0.02);
    }
}

TEST_CASE("weight decay skips biases and layer-norm parameters") {
    ModelConfig c;
    c.vocab_size = 30;
    c.max_seq_len = 4;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.seed = 1;
    auto model = make_pretrain_model<float>(c);
    auto grads = model.like();
    auto params = model.named_params(&grads);

    // name-based filter is the invariant under test
    for (const auto& p : params) {
        const bool no_decay = p.name.ends_with(".bias") || p.name.ends_with(".gamma") ||
                              p.name.ends_with(".beta");
        CHECK(p.decay == !no_decay);
    }

    auto before = model.named_params();
    std::vector<std::vector<float>> snapshot;
    for (auto& p : before) snapshot.push_back(p.value->v);

    AdamW<float> opt(0.1, 0.0);
    opt.init(params);
    opt.step(params, 1e-2);  // zero gradients: only decay moves parameters

    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].decay) {
            bool moved = false;
            for (size_t j = 0; j < snapshot[i].size(); ++j) {
                if (params[i].value->v[j] != snapshot[i][j]) moved = true;
            }
            CHECK(moved);
        } else {
            CHECK(params[i].value->v == snapshot[i]);
        }
    }
}

TEST_CASE("pretrain with zero steps returns the initialization") {
    const auto corpus = generate_corpus(CorpusSpec::defaults(5, 3));
    std::vector<std::string> texts;
    for (const auto& r : corpus) texts.push_back(r.text);
    const Vocab vocab = train_wordpiece(texts, 200, 1);

    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 16;
    mc.hidden_dim = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ff_dim = 32;
    mc.seed = 7;
    TrainConfig tc;
    tc.max_steps = 0;
    tc.seq_len = 16;
    tc.seed = 9;

    TrainLog log;
    auto trained = pretrain(corpus, vocab, mc, tc, log);
    auto fresh = make_pretrain_model<float>(mc);
    auto pa = trained.named_params();
    auto pb = fresh.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value->v == pb[i].value->v);
    CHECK(log.entries.empty());
}

TEST_CASE("pretrain is deterministic per seed") {
    const auto corpus = generate_corpus(CorpusSpec::defaults(8, 3));
    std::vector<std::string> texts;
    for (const auto& r : corpus) texts.push_back(r.text);
    const Vocab vocab = train_wordpiece(texts, 220, 1);

    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 16;
    mc.hidden_dim = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ff_dim = 32;
    mc.seed = 7;
    TrainConfig tc;
    tc.max_steps = 12;
    tc.batch_size = 8;
    tc.seq_len = 16;
    tc.seed = 11;

    TrainLog la, lb;
    auto a = pretrain(corpus, vocab, mc, tc, la);
    auto b = pretrain(corpus, vocab, mc, tc, lb);
    REQUIRE(la.entries.size() == lb.entries.size());
    for (size_t i = 0; i < la.entries.size(); ++i) {
        CHECK(la.entries[i].loss == lb.entries[i].loss);
        CHECK(la.entries[i].lr == lb.entries[i].lr);
    }
    auto pa = a.named_params();
    auto pb = b.named_params();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value->v == pb[i].value->v);
}

TEST_CASE("checkpoint round trip preserves every tensor bit") {
    ModelConfig c;
    c.vocab_size = 30;
    c.max_seq_len = 4;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.seed = 19;
    auto model = make_classifier_model<float>(c, 4, true, 2);
    const auto path =
        (std::filesystem::temp_directory_path() / "radreport_ckpt_test.ckpt").string();
    save_checkpoint(path, model, 0xabcdef1234ULL, "unit test");

    CheckpointInfo info;
    auto loaded = load_checkpoint(path, &info);
    CHECK(info.vocab_hash == 0xabcdef1234ULL);
    CHECK(loaded.config == c);
    CHECK(loaded.head.has_value());
    CHECK(loaded.aux.has_value());
    CHECK(!loaded.mlm.has_value());
    auto pa = model.named_params();
    auto pb = loaded.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].value->v == pb[i].value->v);
    }
    std::filesystem::remove(path);
}

TEST_CASE("finetune with zero epochs leaves the encoder untouched") {
    const Vocab vocab = toy_vocab(40);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 8;
    mc.hidden_dim = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ff_dim = 32;
    mc.seed = 3;
    auto base = make_pretrain_model<float>(mc);

    TaskDataset data;
    data.n_classes = 2;
    for (int i = 0; i < 6; ++i) {
        TaskExample ex;
        ex.tokens = encode("tok1 tok2", vocab, 8);
        ex.label = i % 2;
        data.items.push_back(ex);
    }
    TrainConfig tc;
    tc.epochs = 0;
    tc.seed = 5;
    TrainLog log;
    auto tuned = finetune(data, base, tc, log);
    CHECK(tuned.encoder.token_embedding.v == base.encoder.token_embedding.v);
    CHECK(tuned.head.has_value());
    CHECK(log.entries.empty());
}

TEST_CASE("finetune rejects out-of-range labels before training") {
    const Vocab vocab = toy_vocab(40);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 8;
    mc.hidden_dim = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ff_dim = 32;
    auto base = make_pretrain_model<float>(mc);
    TaskDataset data;
    data.n_classes = 2;
    TaskExample ex;
    ex.tokens = encode("tok1", vocab, 8);
    ex.label = 2;  // unseen label
    data.items.push_back(ex);
    TrainConfig tc;
    TrainLog log;
    CHECK_THROWS_AS(finetune(data, base, tc, log), ConfigError);
}

TEST_CASE("a linearly separable toy task trains to 100 percent") {
    // ten templated sentences, two classes
    const std::vector<std::string> benign = {
        "benign stable cyst noted", "stable benign appearance", "benign calcification seen",
        "cyst stable benign",       "benign nodule stable"};
    const std::vector<std::string> suspicious = {
        "suspicious irregular mass", "irregular suspicious lesion",
        "suspicious mass irregular", "new irregular suspicious density",
        "irregular mass suspicious"};
    std::vector<std::string> all;
    all.insert(all.end(), benign.begin(), benign.end());
    all.insert(all.end(), suspicious.begin(), suspicious.end());
    const Vocab vocab = train_wordpiece(all, 120, 1);

    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 12;
    mc.hidden_dim = 16;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ff_dim = 32;
    mc.dropout_rate = 0.0f;
    mc.seed = 23;
    auto base = make_pretrain_model<float>(mc);

    TaskDataset data;
    data.n_classes = 2;
    for (size_t i = 0; i < all.size(); ++i) {
        TaskExample ex;
        ex.tokens = encode(all[i], vocab, 12);
        ex.label = i < benign.size() ? 0 : 1;
        data.items.push_back(ex);
    }

    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 16;  // full batch
    tc.learning_rate = 2e-3f;
    tc.warmup_fraction = 0.0f;  // flat-loss warmup plateau would mask the descent
    tc.validation_fraction = 0.0f;
    tc.seed = 29;
    TrainLog log;
    auto model = finetune(data, base, tc, log);

    const auto preds = predict_labels(model, data);
    for (size_t i = 0; i < preds.size(); ++i) CHECK(preds[i] == data.items[i].label);

    // per-epoch mean loss is non-increasing on this separable set
    const size_t steps_per_epoch = log.entries.size() / 30;
    REQUIRE(steps_per_epoch >= 1);
    double prev = 1e30;
    for (int e = 0; e < 30; ++e) {
        double mean = 0.0;
        for (size_t s = 0; s < steps_per_epoch; ++s) {
            mean += log.entries[e * steps_per_epoch + s].loss;
        }
        mean /= static_cast<double>(steps_per_epoch);
        CHECK(mean <= prev + 1e-9);
        prev = mean;
    }

    CHECK(finetune(data, base, tc, log).named_params()[0].value->v ==
          model.named_params()[0].value->v);  // determinism per seed
}

}  // TEST_SUITE
