#include <cmath>

#include "doctest.h"
#include "radreport/gradcheck.hpp"
#include "radreport/heads.hpp"
#include "radreport/model.hpp"
#include "radreport/rng.hpp"

using namespace radreport;

TEST_SUITE("heads") {

TEST_CASE("aux featurization encodes the rules") {
    float f[kAuxInputDim];

    SUBCASE("first sentence: None slot set, position feature zero") {
        aux_featurize(AuxFeatures{-1, 0, 12}, f);
        CHECK(f[7] == 1.0f);
        for (int i = 0; i < 7; ++i) CHECK(f[i] == 0.0f);
        CHECK(f[8] == 0.0f);
        CHECK(f[9] == doctest::Approx(12.0f / 64.0f));
    }
    SUBCASE("previous label one-hot is injective") {
        float g[kAuxInputDim];
        aux_featurize(AuxFeatures{2, 3, 10}, f);
        aux_featurize(AuxFeatures{4, 3, 10}, g);
        bool differ = false;
        for (int i = 0; i < kAuxInputDim; ++i) differ |= (f[i] != g[i]);
        CHECK(differ);
        CHECK(f[2] == 1.0f);
        CHECK(g[4] == 1.0f);
    }
    SUBCASE("length feature caps at 64") {
        aux_featurize(AuxFeatures{3, 70, 200}, f);
        CHECK(f[9] == 1.0f);
        CHECK(f[8] == doctest::Approx(70.0f / 200.0f));
    }
    SUBCASE("invariants rejected") {
        CHECK_THROWS(aux_featurize(AuxFeatures{-1, 1, 3}, f));   // prev None off start
        CHECK_THROWS(aux_featurize(AuxFeatures{2, 0, 3}, f));    // start must have None
        CHECK_THROWS(aux_featurize(AuxFeatures{1, 5, 5}, f));    // index >= total
    }
}

TEST_CASE("aux encoder output is 128-wide and inside (-1,1)") {
    const auto params = init_aux_encoder<float>(11);
    for (int prev : {-1, 0, 3, 6}) {
        const AuxFeatures aux{prev, prev < 0 ? 0 : 4, 9};
        const auto out = encode_aux(aux, params);
        REQUIRE(out.size() == kAuxOutputDim);
        for (float x : out) {
            CHECK(x > -1.0f);
            CHECK(x < 1.0f);
        }
    }
}

TEST_CASE("classify: softmax properties") {
    auto head = init_classifier<float>(6, 4, 3);
    Rng rng(8);
    std::vector<float> feat(6);
    for (auto& x : feat) x = static_cast<float>(rng.normal());

    SUBCASE("probabilities sum to one") {
        const auto p = classify_one(feat, head);
        double s = 0.0;
        for (float x : p) s += x;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("zero head gives the uniform distribution") {
        auto zero = head;
        zero.w.zero();
        zero.b.zero();
        const auto p = classify_one(feat, zero);
        for (float x : p) CHECK(x == doctest::Approx(0.25f));
    }
    SUBCASE("shifting all logits leaves probabilities unchanged") {
        auto shifted = head;
        for (auto& b : shifted.b.v) b += 3.5f;
        const auto p0 = classify_one(feat, head);
        const auto p1 = classify_one(feat, shifted);
        for (size_t i = 0; i < p0.size(); ++i) {
            CHECK(p1[i] == doctest::Approx(p0[i]).epsilon(1e-5));
        }
    }
    SUBCASE("dimension mismatch is an error") {
        std::vector<float> wrong(5, 0.1f);
        CHECK_THROWS(classify_one(wrong, head));
    }
}

TEST_CASE("classify_with_aux reduces to classify when the aux block is zero") {
    const int64_t hidden = 16;
    auto full = init_classifier<float>(hidden + kAuxOutputDim, 5, 21);
    // zero the aux-column block of the weight
    for (int64_t r = hidden; r < hidden + kAuxOutputDim; ++r) {
        for (int64_t c = 0; c < 5; ++c) full.w.at(r, c) = 0.0f;
    }
    ClassifierHead<float> truncated;
    truncated.w.resize({hidden, 5});
    for (int64_t r = 0; r < hidden; ++r) {
        for (int64_t c = 0; c < 5; ++c) truncated.w.at(r, c) = full.w.at(r, c);
    }
    truncated.b = full.b;

    Rng rng(4);
    std::vector<float> pooled(hidden);
    for (auto& x : pooled) x = static_cast<float>(rng.normal());
    std::vector<float> aux_vec(kAuxOutputDim);
    for (auto& x : aux_vec) x = static_cast<float>(std::tanh(rng.normal()));

    const auto pa = classify_with_aux(pooled, aux_vec, full);
    const auto pb = classify_one(pooled, truncated);
    REQUIRE(pa.size() == 5);
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == doctest::Approx(pb[i]));

    const auto pa2 = classify_with_aux(pooled, aux_vec, full);
    CHECK(pa == pa2);  // deterministic
}

TEST_CASE("argmax ties break toward the lowest class index") {
    const float probs[4] = {0.3f, 0.3f, 0.3f, 0.1f};
    CHECK(argmax_class(probs, 4) == 0);
}

TEST_CASE("cls_loss values and gradient") {
    SUBCASE("certain correct prediction costs zero") {
        std::vector<float> p = {0.0f, 1.0f, 0.0f};
        CHECK(cls_loss(p, 1) == doctest::Approx(0.0));
    }
    SUBCASE("uniform over C classes costs ln C") {
        std::vector<float> p(5, 0.2f);
        CHECK(cls_loss(p, 2) == doctest::Approx(std::log(5.0)).epsilon(1e-6));
    }
    SUBCASE("gold out of range") {
        std::vector<float> p(3, 1.0f / 3.0f);
        CHECK_THROWS(cls_loss(p, 3));
    }
    SUBCASE("gradient p - onehot matches central differences") {
        // oracle: perturb logits, recompute -ln softmax[gold] in double
        std::vector<double> logits = {0.3, -1.2, 0.7, 0.1};
        const int gold = 2;
        auto nll = [&](const std::vector<double>& z) {
            double mx = z[0];
            for (double v : z) mx = std::max(mx, v);
            double denom = 0.0;
            for (double v : z) denom += std::exp(v - mx);
            return -(z[gold] - mx - std::log(denom));
        };
        std::vector<double> probs(4);
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (size_t i = 0; i < 4; ++i) denom += std::exp(logits[i] - mx);
        for (size_t i = 0; i < 4; ++i) probs[i] = std::exp(logits[i] - mx) / denom;

        std::vector<double> analytic;
        cls_loss(probs, gold, &analytic);
        const double eps = 1e-6;
        for (size_t i = 0; i < 4; ++i) {
            auto up = logits, down = logits;
            up[i] += eps;
            down[i] -= eps;
            const double fd = (nll(up) - nll(down)) / (2 * eps);
            CHECK(analytic[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("mlm loss values") {
    const int64_t h = 8, v = 30;
    auto head = init_mlm_head<float>(h, v, 2);
    Tensor<float> hidden({4, h});
    Rng rng(5);
    for (auto& x : hidden.v) x = static_cast<float>(rng.normal());
    Tensor<float> emb({v, h});

    SUBCASE("no masked positions costs zero") {
        MlmCache<float> cache;
        CHECK(mlm_loss(hidden, emb, head, {}, {}, cache) == 0.0);
    }
    SUBCASE("zero embedding table gives the uniform loss ln V") {
        MlmCache<float> cache;
        const double loss = mlm_loss(hidden, emb, head, {0, 2}, {5, 9}, cache);
        CHECK(loss == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-6));
    }
    SUBCASE("a dominant decoder bias drives the loss toward zero") {
        auto confident = head;
        confident.decoder_bias.at(5) = 60.0f;
        MlmCache<float> cache;
        const double loss = mlm_loss(hidden, emb, confident, {1}, {5}, cache);
        CHECK(loss < 1e-9);
    }
    SUBCASE("target out of range") {
        MlmCache<float> cache;
        CHECK_THROWS(mlm_loss(hidden, emb, head, {0}, {static_cast<int32_t>(v)}, cache));
    }
}

TEST_CASE("full classifier model gradients match central differences") {
    ModelConfig c;
    c.vocab_size = 40;
    c.max_seq_len = 4;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.dropout_rate = 0.0f;
    c.seed = 9;

    auto model = make_classifier_model<double>(c, 3, true, 31);
    auto grads = model.like();
    auto params = model.named_params(&grads);

    Batch batch;
    TokenSequence s;
    s.ids = {2, 17, 9, 3};
    s.attention_mask = {1, 1, 1, 1};
    batch.append(s);
    TokenSequence s2;
    s2.ids = {2, 30, 3, 0};
    s2.attention_mask = {1, 1, 1, 0};
    batch.append(s2);
    const std::vector<AuxFeatures> aux = {{-1, 0, 5}, {3, 2, 5}};
    const std::vector<int32_t> gold = {1, 2};

    auto loss_fn = [&]() {
        ClassifyState<double> state;
        model_classify_forward(model, batch, &aux, false, nullptr, state);
        double loss = 0.0;
        for (int64_t i = 0; i < state.probs.rows(); ++i) {
            loss -= std::log(state.probs.at(i, gold[static_cast<size_t>(i)]));
        }
        return loss / static_cast<double>(state.probs.rows());
    };
    auto grad_fn = [&]() {
        for (auto& p : params) p.grad->zero();
        ClassifyState<double> state;
        model_classify_forward(model, batch, &aux, false, nullptr, state);
        model_classify_backward(model, state, gold, grads);
    };

    const auto report =
        finite_difference_check<double>(params, loss_fn, grad_fn, 5e-4, 1e-3, 55, 16);
    for (const auto& e : report.entries) {
        INFO(e.name << " max_rel_err=" << e.max_rel_err);
        CHECK(e.max_rel_err <= 1e-3);
    }
    CHECK(report.passed());
}

TEST_CASE("mlm model gradients match central differences") {
    ModelConfig c;
    c.vocab_size = 25;
    c.max_seq_len = 4;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.dropout_rate = 0.0f;
    c.seed = 13;

    auto model = make_pretrain_model<double>(c);
    auto grads = model.like();
    auto params = model.named_params(&grads);

    Batch batch;
    TokenSequence s;
    s.ids = {2, 4, 9, 3};  // one [MASK] in the middle
    s.attention_mask = {1, 1, 1, 1};
    batch.append(s);
    const std::vector<int64_t> rows = {1, 2};
    const std::vector<int32_t> targets = {7, 9};

    auto loss_fn = [&]() {
        MlmState<double> state;
        return model_mlm_forward(model, batch, rows, targets, false, nullptr, state);
    };
    auto grad_fn = [&]() {
        for (auto& p : params) p.grad->zero();
        MlmState<double> state;
        model_mlm_forward(model, batch, rows, targets, false, nullptr, state);
        model_mlm_backward(model, state, grads);
    };

    const auto report =
        finite_difference_check<double>(params, loss_fn, grad_fn, 5e-4, 1e-3, 66, 16);
    for (const auto& e : report.entries) {
        INFO(e.name << " max_rel_err=" << e.max_rel_err);
        CHECK(e.max_rel_err <= 1e-3);
    }
    CHECK(report.passed());
}

TEST_CASE("float eps sweep shows the discretization/roundoff U-curve") {
    ModelConfig c;
    c.vocab_size = 30;
    c.max_seq_len = 4;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.dropout_rate = 0.0f;
    c.seed = 17;

    auto model = make_classifier_model<float>(c, 3, false, 41);
    auto grads = model.like();
    auto params = model.named_params(&grads);

    Batch batch;
    TokenSequence s;
    s.ids = {2, 11, 21, 3};
    s.attention_mask = {1, 1, 1, 1};
    batch.append(s);
    const std::vector<int32_t> gold = {1};

    auto loss_fn = [&]() {
        ClassifyState<float> state;
        model_classify_forward(model, batch, nullptr, false, nullptr, state);
        return static_cast<double>(-std::log(state.probs.at(0, 1)));
    };
    auto grad_fn = [&]() {
        for (auto& p : params) p.grad->zero();
        ClassifyState<float> state;
        model_classify_forward(model, batch, nullptr, false, nullptr, state);
        model_classify_backward(model, state, gold, grads);
    };

    double errs[3];
    const double eps_grid[3] = {1e-2, 1e-3, 1e-4};
    for (int i = 0; i < 3; ++i) {
        const auto report = finite_difference_check<float>(params, loss_fn, grad_fn,
                                                           eps_grid[i], 1e9, 7, 12);
        errs[i] = report.worst();
    }
    INFO("eps sweep errors: " << errs[0] << " " << errs[1] << " " << errs[2]);
    // discretization dominates at 1e-2, float roundoff at 1e-4
    CHECK(errs[1] <= errs[0]);
    CHECK(errs[1] <= errs[2]);
}

}  // TEST_SUITE
