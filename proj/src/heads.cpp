#include "radreport/heads.hpp"

#include <cmath>
#include <stdexcept>

#include "radreport/fastmath.hpp"
#include "radreport/kernels.hpp"
#include "radreport/rng.hpp"

namespace radreport {

void AuxFeatures::validate() const {
    if (total_sentences <= 0) throw std::invalid_argument("total_sentences must be positive");
    if (sentence_index < 0 || sentence_index >= total_sentences) {
        throw std::invalid_argument("sentence_index must lie in [0, total_sentences)");
    }
    if ((prev_label < 0) != (sentence_index == 0)) {
        throw std::invalid_argument("prev_label is None exactly at the first sentence");
    }
    if (prev_label >= kNumSections) throw std::invalid_argument("prev_label out of range");
}

namespace {

template <typename S>
void init_weight(Tensor<S>& t, std::initializer_list<int64_t> shape, Rng& rng) {
    t.resize(shape);
    for (auto& v : t.v) v = static_cast<S>(rng.truncated_normal(0.02, 0.04));
}

template <typename S>
void tanh_inplace(Tensor<S>& t) {
    for (auto& v : t.v) v = std::tanh(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// aux encoder

template <typename S>
AuxEncoderParams<S> init_aux_encoder(uint64_t seed) {
    Rng rng(seed);
    AuxEncoderParams<S> p;
    init_weight(p.w1, {kAuxInputDim, kAuxHiddenDim}, rng);
    p.b1.resize({kAuxHiddenDim});
    init_weight(p.w2, {kAuxHiddenDim, kAuxHiddenDim}, rng);
    p.b2.resize({kAuxHiddenDim});
    init_weight(p.w3, {kAuxHiddenDim, kAuxOutputDim}, rng);
    p.b3.resize({kAuxOutputDim});
    return p;
}

template <typename S>
AuxEncoderParams<S> aux_like(const AuxEncoderParams<S>& p) {
    AuxEncoderParams<S> g;
    g.w1.resize(p.w1.shape);
    g.b1.resize(p.b1.shape);
    g.w2.resize(p.w2.shape);
    g.b2.resize(p.b2.shape);
    g.w3.resize(p.w3.shape);
    g.b3.resize(p.b3.shape);
    return g;
}

template <typename S>
void aux_named_params(AuxEncoderParams<S>& params, AuxEncoderParams<S>* grads,
                      std::vector<NamedParam<S>>& out) {
    auto add = [&](const char* name, Tensor<S>& v, Tensor<S>* g, bool decay) {
        out.push_back({name, &v, g, decay});
    };
    add("aux.fc1.weight", params.w1, grads ? &grads->w1 : nullptr, true);
    add("aux.fc1.bias", params.b1, grads ? &grads->b1 : nullptr, false);
    add("aux.fc2.weight", params.w2, grads ? &grads->w2 : nullptr, true);
    add("aux.fc2.bias", params.b2, grads ? &grads->b2 : nullptr, false);
    add("aux.fc3.weight", params.w3, grads ? &grads->w3 : nullptr, true);
    add("aux.fc3.bias", params.b3, grads ? &grads->b3 : nullptr, false);
}

template <typename S>
void aux_featurize(const AuxFeatures& aux, S* out) {
    aux.validate();
    for (int i = 0; i < kAuxInputDim; ++i) out[i] = S(0);
    out[aux.prev_label < 0 ? kNumSections : aux.prev_label] = S(1);
    out[8] = static_cast<S>(aux.sentence_index) / static_cast<S>(aux.total_sentences);
    const int32_t capped =
        aux.total_sentences < kAuxLengthCap ? aux.total_sentences : kAuxLengthCap;
    out[9] = static_cast<S>(capped) / static_cast<S>(kAuxLengthCap);
}

template <typename S>
void aux_forward(const AuxEncoderParams<S>& params, const std::vector<AuxFeatures>& batch,
                 AuxCache<S>& cache) {
    const int64_t n = static_cast<int64_t>(batch.size());
    cache.input.resize({n, kAuxInputDim});
    for (int64_t i = 0; i < n; ++i) {
        aux_featurize(batch[static_cast<size_t>(i)], cache.input.data() + i * kAuxInputDim);
    }
    cache.pre1.resize({n, kAuxHiddenDim});
    kern::matmul(cache.input.data(), params.w1.data(), cache.pre1.data(), n, kAuxInputDim,
                 kAuxHiddenDim);
    kern::add_bias(cache.pre1.data(), params.b1.data(), n, kAuxHiddenDim);
    cache.act1 = cache.pre1;
    tanh_inplace(cache.act1);

    cache.pre2.resize({n, kAuxHiddenDim});
    kern::matmul(cache.act1.data(), params.w2.data(), cache.pre2.data(), n, kAuxHiddenDim,
                 kAuxHiddenDim);
    kern::add_bias(cache.pre2.data(), params.b2.data(), n, kAuxHiddenDim);
    cache.act2 = cache.pre2;
    tanh_inplace(cache.act2);

    cache.pre3.resize({n, kAuxOutputDim});
    kern::matmul(cache.act2.data(), params.w3.data(), cache.pre3.data(), n, kAuxHiddenDim,
                 kAuxOutputDim);
    kern::add_bias(cache.pre3.data(), params.b3.data(), n, kAuxOutputDim);
    cache.out = cache.pre3;
    tanh_inplace(cache.out);
}

template <typename S>
void aux_backward(const AuxEncoderParams<S>& params, const AuxCache<S>& cache,
                  const Tensor<S>& d_out, AuxEncoderParams<S>& grads) {
    const int64_t n = cache.input.rows();
    auto tanh_grad = [](const Tensor<S>& act, const Tensor<S>& dy, Tensor<S>& dx) {
        dx.resize(act.shape);
        for (int64_t i = 0; i < act.numel(); ++i) {
            dx.at(i) = dy.at(i) * (S(1) - act.at(i) * act.at(i));
        }
    };

    Tensor<S> d_pre3;
    tanh_grad(cache.out, d_out, d_pre3);
    kern::matmul_tn_acc(cache.act2.data(), d_pre3.data(), grads.w3.data(), n, kAuxHiddenDim,
                        kAuxOutputDim);
    kern::colsum_acc(d_pre3.data(), grads.b3.data(), n, kAuxOutputDim);
    Tensor<S> d_act2({n, kAuxHiddenDim});
    kern::matmul_nt(d_pre3.data(), params.w3.data(), d_act2.data(), n, kAuxOutputDim,
                    kAuxHiddenDim);

    Tensor<S> d_pre2;
    tanh_grad(cache.act2, d_act2, d_pre2);
    kern::matmul_tn_acc(cache.act1.data(), d_pre2.data(), grads.w2.data(), n, kAuxHiddenDim,
                        kAuxHiddenDim);
    kern::colsum_acc(d_pre2.data(), grads.b2.data(), n, kAuxHiddenDim);
    Tensor<S> d_act1({n, kAuxHiddenDim});
    kern::matmul_nt(d_pre2.data(), params.w2.data(), d_act1.data(), n, kAuxHiddenDim,
                    kAuxHiddenDim);

    Tensor<S> d_pre1;
    tanh_grad(cache.act1, d_act1, d_pre1);
    kern::matmul_tn_acc(cache.input.data(), d_pre1.data(), grads.w1.data(), n, kAuxInputDim,
                        kAuxHiddenDim);
    kern::colsum_acc(d_pre1.data(), grads.b1.data(), n, kAuxHiddenDim);
}

template <typename S>
std::vector<S> encode_aux(const AuxFeatures& aux, const AuxEncoderParams<S>& params) {
    AuxCache<S> cache;
    aux_forward(params, std::vector<AuxFeatures>{aux}, cache);
    return cache.out.v;
}

// ---------------------------------------------------------------------------
// classifier head

template <typename S>
ClassifierHead<S> init_classifier(int64_t feature_dim, int64_t n_classes, uint64_t seed) {
    if (n_classes < 2) throw std::invalid_argument("a classifier needs at least 2 classes");
    Rng rng(seed);
    ClassifierHead<S> h;
    h.w.resize({feature_dim, n_classes});
    for (auto& v : h.w.v) v = static_cast<S>(rng.truncated_normal(0.02, 0.04));
    h.b.resize({n_classes});
    return h;
}

template <typename S>
ClassifierHead<S> head_like(const ClassifierHead<S>& p) {
    ClassifierHead<S> g;
    g.w.resize(p.w.shape);
    g.b.resize(p.b.shape);
    return g;
}

template <typename S>
void head_named_params(ClassifierHead<S>& params, ClassifierHead<S>* grads,
                       std::vector<NamedParam<S>>& out) {
    out.push_back({"head.weight", &params.w, grads ? &grads->w : nullptr, true});
    out.push_back({"head.bias", &params.b, grads ? &grads->b : nullptr, false});
}

namespace {

template <typename S>
void softmax_rows(Tensor<S>& logits) {
    const int64_t n = logits.rows();
    const int64_t c = logits.cols();
    for (int64_t i = 0; i < n; ++i) {
        S* row = logits.data() + i * c;
        S mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        for (int64_t j = 0; j < c; ++j) {
            row[j] = fastmath::fast_exp(row[j] - mx);
            denom += row[j];
        }
        for (int64_t j = 0; j < c; ++j) row[j] /= denom;
    }
}

}  // namespace

template <typename S>
Tensor<S> classify(const Tensor<S>& features, const ClassifierHead<S>& head) {
    if (features.cols() != head.feature_dim()) {
        throw std::invalid_argument("feature dimension does not match the head");
    }
    const int64_t n = features.rows();
    Tensor<S> logits({n, head.n_classes()});
    kern::matmul(features.data(), head.w.data(), logits.data(), n, head.feature_dim(),
                 head.n_classes());
    kern::add_bias(logits.data(), head.b.data(), n, head.n_classes());
    softmax_rows(logits);
    return logits;
}

template <typename S>
std::vector<S> classify_one(const std::vector<S>& features, const ClassifierHead<S>& head) {
    Tensor<S> f({1, static_cast<int64_t>(features.size())});
    f.v = features;
    return classify(f, head).v;
}

template <typename S>
std::vector<S> classify_with_aux(const std::vector<S>& pooled, const std::vector<S>& aux_vec,
                                 const ClassifierHead<S>& head) {
    std::vector<S> features = pooled;
    features.insert(features.end(), aux_vec.begin(), aux_vec.end());
    return classify_one(features, head);
}

template <typename S>
int32_t argmax_class(const S* probs, int64_t n_classes) {
    int32_t best = 0;
    for (int64_t j = 1; j < n_classes; ++j) {
        if (probs[j] > probs[best]) best = static_cast<int32_t>(j);
    }
    return best;
}

template <typename S>
double cls_loss_backward(const Tensor<S>& features, const Tensor<S>& probs,
                         const std::vector<int32_t>& gold, const ClassifierHead<S>& head,
                         ClassifierHead<S>& grads, Tensor<S>& d_features) {
    const int64_t n = features.rows();
    const int64_t c = head.n_classes();
    if (static_cast<int64_t>(gold.size()) != n) {
        throw std::invalid_argument("gold label count does not match the batch");
    }
    double loss = 0.0;
    Tensor<S> d_logits({n, c});
    for (int64_t i = 0; i < n; ++i) {
        const int32_t g = gold[static_cast<size_t>(i)];
        if (g < 0 || g >= c) throw std::out_of_range("gold label out of range");
        const double p = std::max(static_cast<double>(probs.at(i, g)), 1e-30);
        loss -= std::log(p);
        for (int64_t j = 0; j < c; ++j) {
            d_logits.at(i, j) = (probs.at(i, j) - (j == g ? S(1) : S(0))) / static_cast<S>(n);
        }
    }
    loss /= static_cast<double>(n);

    kern::matmul_tn_acc(features.data(), d_logits.data(), grads.w.data(), n,
                        head.feature_dim(), c);
    kern::colsum_acc(d_logits.data(), grads.b.data(), n, c);
    if (d_features.numel() == 0) d_features.resize(features.shape);
    Tensor<S> tmp({n, head.feature_dim()});
    kern::matmul_nt(d_logits.data(), head.w.data(), tmp.data(), n, c, head.feature_dim());
    for (int64_t i = 0; i < features.numel(); ++i) d_features.at(i) += tmp.at(i);
    return loss;
}

template <typename S>
double cls_loss(const std::vector<S>& probabilities, int32_t gold, std::vector<S>* d_logits) {
    const auto c = static_cast<int64_t>(probabilities.size());
    if (gold < 0 || gold >= c) throw std::out_of_range("gold label out of range");
    if (d_logits) {
        d_logits->assign(probabilities.begin(), probabilities.end());
        (*d_logits)[static_cast<size_t>(gold)] -= S(1);
    }
    const double p = std::max(static_cast<double>(probabilities[static_cast<size_t>(gold)]),
                              1e-30);
    return -std::log(p);
}

// ---------------------------------------------------------------------------
// MLM head

template <typename S>
MlmHeadParams<S> init_mlm_head(int64_t hidden_dim, int64_t vocab_size, uint64_t seed) {
    Rng rng(seed);
    MlmHeadParams<S> p;
    init_weight(p.transform_w, {hidden_dim, hidden_dim}, rng);
    p.transform_b.resize({hidden_dim});
    p.norm_gamma.resize({hidden_dim});
    std::fill(p.norm_gamma.v.begin(), p.norm_gamma.v.end(), S(1));
    p.norm_beta.resize({hidden_dim});
    p.decoder_bias.resize({vocab_size});
    return p;
}

template <typename S>
MlmHeadParams<S> mlm_like(const MlmHeadParams<S>& p) {
    MlmHeadParams<S> g;
    g.transform_w.resize(p.transform_w.shape);
    g.transform_b.resize(p.transform_b.shape);
    g.norm_gamma.resize(p.norm_gamma.shape);
    g.norm_beta.resize(p.norm_beta.shape);
    g.decoder_bias.resize(p.decoder_bias.shape);
    return g;
}

template <typename S>
void mlm_named_params(MlmHeadParams<S>& params, MlmHeadParams<S>* grads,
                      std::vector<NamedParam<S>>& out) {
    auto add = [&](const char* name, Tensor<S>& v, Tensor<S>* g, bool decay) {
        out.push_back({name, &v, g, decay});
    };
    add("mlm.transform.weight", params.transform_w, grads ? &grads->transform_w : nullptr, true);
    add("mlm.transform.bias", params.transform_b, grads ? &grads->transform_b : nullptr, false);
    add("mlm.norm.gamma", params.norm_gamma, grads ? &grads->norm_gamma : nullptr, false);
    add("mlm.norm.beta", params.norm_beta, grads ? &grads->norm_beta : nullptr, false);
    add("mlm.decoder.bias", params.decoder_bias, grads ? &grads->decoder_bias : nullptr, false);
}

template <typename S>
double mlm_loss(const Tensor<S>& hidden, const Tensor<S>& token_embedding,
                const MlmHeadParams<S>& params, const std::vector<int64_t>& masked_rows,
                const std::vector<int32_t>& target_ids, MlmCache<S>& cache) {
    if (masked_rows.size() != target_ids.size()) {
        throw std::invalid_argument("masked rows and targets must align");
    }
    const int64_t m = static_cast<int64_t>(masked_rows.size());
    const int64_t h = hidden.cols();
    const int64_t v = token_embedding.rows();
    cache.rows = masked_rows;
    cache.targets = target_ids;
    if (m == 0) return 0.0;
    for (int32_t id : target_ids) {
        if (id < 0 || id >= v) throw std::out_of_range("mlm target id out of range");
    }
    for (int64_t row : masked_rows) {
        if (row < 0 || row >= hidden.rows()) {
            throw std::out_of_range("masked row index outside the batch");
        }
    }

    cache.gathered.resize({m, h});
    for (int64_t i = 0; i < m; ++i) {
        const S* src = hidden.data() + masked_rows[static_cast<size_t>(i)] * h;
        std::copy(src, src + h, cache.gathered.data() + i * h);
    }

    cache.t_pre.resize({m, h});
    kern::matmul(cache.gathered.data(), params.transform_w.data(), cache.t_pre.data(), m, h, h);
    kern::add_bias(cache.t_pre.data(), params.transform_b.data(), m, h);
    cache.t_act.resize({m, h});
    kern::gelu(cache.t_pre.data(), cache.t_act.data(), m * h);
    cache.t_norm.resize({m, h});
    cache.t_mean.resize({m});
    cache.t_rstd.resize({m});
    kern::layernorm(cache.t_act.data(), params.norm_gamma.data(), params.norm_beta.data(),
                    cache.t_norm.data(), cache.t_mean.data(), cache.t_rstd.data(), m, h,
                    S(1e-5));

    cache.probs.resize({m, v});
    kern::matmul_nt(cache.t_norm.data(), token_embedding.data(), cache.probs.data(), m, h, v);
    kern::add_bias(cache.probs.data(), params.decoder_bias.data(), m, v);
    softmax_rows(cache.probs);

    double loss = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        const double p = std::max(
            static_cast<double>(cache.probs.at(i, target_ids[static_cast<size_t>(i)])), 1e-30);
        loss -= std::log(p);
    }
    return loss / static_cast<double>(m);
}

template <typename S>
void mlm_backward(const Tensor<S>& hidden, const Tensor<S>& token_embedding,
                  const MlmHeadParams<S>& params, const MlmCache<S>& cache,
                  Tensor<S>& d_hidden, Tensor<S>& d_token_embedding, MlmHeadParams<S>& grads) {
    const int64_t m = static_cast<int64_t>(cache.rows.size());
    if (m == 0) return;
    const int64_t h = hidden.cols();
    const int64_t v = token_embedding.rows();

    Tensor<S> d_logits({m, v});
    for (int64_t i = 0; i < m; ++i) {
        const int32_t target = cache.targets[static_cast<size_t>(i)];
        for (int64_t j = 0; j < v; ++j) {
            d_logits.at(i, j) =
                (cache.probs.at(i, j) - (j == target ? S(1) : S(0))) / static_cast<S>(m);
        }
    }

    // tied decoder: logits = t_norm . E^T + b
    Tensor<S> d_tnorm({m, h});
    kern::matmul(d_logits.data(), token_embedding.data(), d_tnorm.data(), m, v, h);
    kern::matmul_tn_acc(d_logits.data(), cache.t_norm.data(), d_token_embedding.data(), m, v,
                        h);
    kern::colsum_acc(d_logits.data(), grads.decoder_bias.data(), m, v);

    Tensor<S> d_tact({m, h});
    kern::layernorm_backward_input(d_tnorm.data(), cache.t_act.data(), params.norm_gamma.data(),
                                   cache.t_mean.data(), cache.t_rstd.data(), d_tact.data(), m,
                                   h);
    kern::layernorm_backward_params(d_tnorm.data(), cache.t_act.data(), cache.t_mean.data(),
                                    cache.t_rstd.data(), grads.norm_gamma.data(),
                                    grads.norm_beta.data(), m, h);

    Tensor<S> d_tpre({m, h});
    kern::gelu_backward(d_tact.data(), cache.t_pre.data(), d_tpre.data(), m * h);

    kern::matmul_tn_acc(cache.gathered.data(), d_tpre.data(), grads.transform_w.data(), m, h,
                        h);
    kern::colsum_acc(d_tpre.data(), grads.transform_b.data(), m, h);

    Tensor<S> d_gathered({m, h});
    kern::matmul_nt(d_tpre.data(), params.transform_w.data(), d_gathered.data(), m, h, h);
    if (d_hidden.numel() == 0) d_hidden.resize(hidden.shape);
    for (int64_t i = 0; i < m; ++i) {
        S* dst = d_hidden.data() + cache.rows[static_cast<size_t>(i)] * h;
        const S* src = d_gathered.data() + i * h;
        for (int64_t d = 0; d < h; ++d) dst[d] += src[d];
    }
}

// ---------------------------------------------------------------------------

#define RADREPORT_INSTANTIATE_HEADS(S)                                                        \
    template AuxEncoderParams<S> init_aux_encoder<S>(uint64_t);                               \
    template AuxEncoderParams<S> aux_like<S>(const AuxEncoderParams<S>&);                     \
    template void aux_named_params<S>(AuxEncoderParams<S>&, AuxEncoderParams<S>*,            \
                                      std::vector<NamedParam<S>>&);                          \
    template void aux_featurize<S>(const AuxFeatures&, S*);                                  \
    template void aux_forward<S>(const AuxEncoderParams<S>&, const std::vector<AuxFeatures>&, \
                                 AuxCache<S>&);                                              \
    template void aux_backward<S>(const AuxEncoderParams<S>&, const AuxCache<S>&,            \
                                  const Tensor<S>&, AuxEncoderParams<S>&);                   \
    template std::vector<S> encode_aux<S>(const AuxFeatures&, const AuxEncoderParams<S>&);   \
    template ClassifierHead<S> init_classifier<S>(int64_t, int64_t, uint64_t);               \
    template ClassifierHead<S> head_like<S>(const ClassifierHead<S>&);                       \
    template void head_named_params<S>(ClassifierHead<S>&, ClassifierHead<S>*,              \
                                       std::vector<NamedParam<S>>&);                        \
    template Tensor<S> classify<S>(const Tensor<S>&, const ClassifierHead<S>&);             \
    template std::vector<S> classify_one<S>(const std::vector<S>&, const ClassifierHead<S>&); \
    template std::vector<S> classify_with_aux<S>(const std::vector<S>&,                     \
                                                 const std::vector<S>&,                     \
                                                 const ClassifierHead<S>&);                 \
    template int32_t argmax_class<S>(const S*, int64_t);                                    \
    template double cls_loss_backward<S>(const Tensor<S>&, const Tensor<S>&,                \
                                         const std::vector<int32_t>&,                       \
                                         const ClassifierHead<S>&, ClassifierHead<S>&,      \
                                         Tensor<S>&);                                       \
    template double cls_loss<S>(const std::vector<S>&, int32_t, std::vector<S>*);           \
    template MlmHeadParams<S> init_mlm_head<S>(int64_t, int64_t, uint64_t);                 \
    template MlmHeadParams<S> mlm_like<S>(const MlmHeadParams<S>&);                         \
    template void mlm_named_params<S>(MlmHeadParams<S>&, MlmHeadParams<S>*,                \
                                      std::vector<NamedParam<S>>&);                        \
    template double mlm_loss<S>(const Tensor<S>&, const Tensor<S>&, const MlmHeadParams<S>&, \
                                const std::vector<int64_t>&, const std::vector<int32_t>&,  \
                                MlmCache<S>&);                                             \
    template void mlm_backward<S>(const Tensor<S>&, const Tensor<S>&,                      \
                                  const MlmHeadParams<S>&, const MlmCache<S>&, Tensor<S>&, \
                                  Tensor<S>&, MlmHeadParams<S>&);

RADREPORT_INSTANTIATE_HEADS(float)
RADREPORT_INSTANTIATE_HEADS(double)

#undef RADREPORT_INSTANTIATE_HEADS

}  // namespace radreport
