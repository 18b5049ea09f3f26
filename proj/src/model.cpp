#include "radreport/model.hpp"

#include <stdexcept>

namespace radreport {

template <typename S>
std::vector<NamedParam<S>> Model<S>::named_params(Model<S>* grads) {
    std::vector<NamedParam<S>> out;
    encoder_named_params(encoder, grads ? &grads->encoder : nullptr, out);
    if (mlm) {
        mlm_named_params(*mlm, grads && grads->mlm ? &*grads->mlm : nullptr, out);
    }
    if (aux) {
        aux_named_params(*aux, grads && grads->aux ? &*grads->aux : nullptr, out);
    }
    if (head) {
        head_named_params(*head, grads && grads->head ? &*grads->head : nullptr, out);
    }
    return out;
}

template <typename S>
Model<S> Model<S>::like() const {
    Model<S> g;
    g.config = config;
    g.encoder = encoder_like(encoder);
    if (mlm) g.mlm = mlm_like(*mlm);
    if (aux) g.aux = aux_like(*aux);
    if (head) g.head = head_like(*head);
    return g;
}

template <typename To, typename From>
Model<To> model_cast(const Model<From>& m) {
    Model<To> out;
    out.config = m.config;
    out.encoder.layers.resize(m.encoder.layers.size());
    if (m.mlm) out.mlm = MlmHeadParams<To>{};
    if (m.aux) out.aux = AuxEncoderParams<To>{};
    if (m.head) out.head = ClassifierHead<To>{};
    std::vector<NamedParam<From>> src = const_cast<Model<From>&>(m).named_params();
    std::vector<NamedParam<To>> dst = out.named_params();
    if (src.size() != dst.size()) throw std::logic_error("model shape mismatch in cast");
    for (size_t i = 0; i < src.size(); ++i) {
        dst[i].value->shape = src[i].value->shape;
        dst[i].value->v.resize(src[i].value->v.size());
        for (size_t j = 0; j < src[i].value->v.size(); ++j) {
            dst[i].value->v[j] = static_cast<To>(src[i].value->v[j]);
        }
    }
    return out;
}

template <typename S>
Model<S> make_pretrain_model(const ModelConfig& config) {
    Model<S> m;
    m.config = config;
    m.encoder = init_encoder<S>(config);
    m.mlm = init_mlm_head<S>(config.hidden_dim, config.vocab_size, config.seed + 1);
    return m;
}

template <typename S>
Model<S> make_classifier_model(const ModelConfig& config, int64_t n_classes, bool with_aux,
                               uint64_t head_seed) {
    Model<S> m;
    m.config = config;
    m.encoder = init_encoder<S>(config);
    if (with_aux) m.aux = init_aux_encoder<S>(head_seed + 1);
    const int64_t feature_dim = config.hidden_dim + (with_aux ? kAuxOutputDim : 0);
    m.head = init_classifier<S>(feature_dim, n_classes, head_seed);
    return m;
}

template <typename S>
void model_classify_forward(const Model<S>& model, const Batch& batch,
                            const std::vector<AuxFeatures>* aux_features, bool train_mode,
                            Rng* rng, ClassifyState<S>& state) {
    if (!model.head) throw std::logic_error("model has no classification head");
    if (model.aux.has_value() != (aux_features != nullptr)) {
        throw std::invalid_argument("aux features must be supplied exactly for aux models");
    }
    encoder_forward(model.encoder, model.config, batch, train_mode, rng, state.enc);

    const int64_t n = batch.n;
    const int64_t h = model.config.hidden_dim;
    if (model.aux) {
        if (static_cast<int64_t>(aux_features->size()) != n) {
            throw std::invalid_argument("aux feature count must match the batch");
        }
        aux_forward(*model.aux, *aux_features, state.aux);
        state.features.resize({n, h + kAuxOutputDim});
        for (int64_t i = 0; i < n; ++i) {
            const S* pooled = state.enc.pooled.data() + i * h;
            const S* auxv = state.aux.out.data() + i * kAuxOutputDim;
            S* dst = state.features.data() + i * (h + kAuxOutputDim);
            std::copy(pooled, pooled + h, dst);
            std::copy(auxv, auxv + kAuxOutputDim, dst + h);
        }
    } else {
        state.features = state.enc.pooled;
    }
    state.probs = classify(state.features, *model.head);
}

template <typename S>
double model_classify_backward(const Model<S>& model, const ClassifyState<S>& state,
                               const std::vector<int32_t>& gold, Model<S>& grads) {
    const int64_t n = state.features.rows();
    const int64_t h = model.config.hidden_dim;
    Tensor<S> d_features;
    const double loss = cls_loss_backward(state.features, state.probs, gold, *model.head,
                                          *grads.head, d_features);

    Tensor<S> d_pooled({n, h});
    if (model.aux) {
        Tensor<S> d_aux({n, static_cast<int64_t>(kAuxOutputDim)});
        for (int64_t i = 0; i < n; ++i) {
            const S* src = d_features.data() + i * (h + kAuxOutputDim);
            std::copy(src, src + h, d_pooled.data() + i * h);
            std::copy(src + h, src + h + kAuxOutputDim, d_aux.data() + i * kAuxOutputDim);
        }
        aux_backward(*model.aux, state.aux, d_aux, *grads.aux);
    } else {
        d_pooled.v = d_features.v;
    }

    Tensor<S> d_hidden;  // no direct hidden-state loss term
    encoder_backward(model.encoder, model.config, state.enc, d_hidden, d_pooled,
                     grads.encoder);
    return loss;
}

template <typename S>
double model_mlm_forward(const Model<S>& model, const Batch& batch,
                         const std::vector<int64_t>& masked_rows,
                         const std::vector<int32_t>& targets, bool train_mode, Rng* rng,
                         MlmState<S>& state) {
    if (!model.mlm) throw std::logic_error("model has no MLM head");
    encoder_forward(model.encoder, model.config, batch, train_mode, rng, state.enc);
    return mlm_loss(state.enc.hidden(), model.encoder.token_embedding, *model.mlm, masked_rows,
                    targets, state.mlm);
}

template <typename S>
void model_mlm_backward(const Model<S>& model, const MlmState<S>& state, Model<S>& grads) {
    Tensor<S> d_hidden;
    mlm_backward(state.enc.hidden(), model.encoder.token_embedding, *model.mlm, state.mlm,
                 d_hidden, grads.encoder.token_embedding, *grads.mlm);
    if (d_hidden.numel() == 0) return;  // nothing was masked
    Tensor<S> d_pooled;
    encoder_backward(model.encoder, model.config, state.enc, d_hidden, d_pooled,
                     grads.encoder);
}

#define RADREPORT_INSTANTIATE_MODEL(S)                                                        \
    template std::vector<NamedParam<S>> Model<S>::named_params(Model<S>*);                    \
    template Model<S> Model<S>::like() const;                                                 \
    template Model<S> make_pretrain_model<S>(const ModelConfig&);                             \
    template Model<S> make_classifier_model<S>(const ModelConfig&, int64_t, bool, uint64_t);  \
    template void model_classify_forward<S>(const Model<S>&, const Batch&,                    \
                                            const std::vector<AuxFeatures>*, bool, Rng*,      \
                                            ClassifyState<S>&);                               \
    template double model_classify_backward<S>(const Model<S>&, const ClassifyState<S>&,      \
                                               const std::vector<int32_t>&, Model<S>&);       \
    template double model_mlm_forward<S>(const Model<S>&, const Batch&,                       \
                                         const std::vector<int64_t>&,                         \
                                         const std::vector<int32_t>&, bool, Rng*,             \
                                         MlmState<S>&);                                       \
    template void model_mlm_backward<S>(const Model<S>&, const MlmState<S>&, Model<S>&);

RADREPORT_INSTANTIATE_MODEL(float)
RADREPORT_INSTANTIATE_MODEL(double)

#undef RADREPORT_INSTANTIATE_MODEL

template Model<double> model_cast<double, float>(const Model<float>&);
template Model<float> model_cast<float, double>(const Model<double>&);
template Model<float> model_cast<float, float>(const Model<float>&);
template Model<double> model_cast<double, double>(const Model<double>&);

}  // namespace radreport
