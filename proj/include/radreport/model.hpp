#pragma once

#include <optional>

#include "radreport/encoder.hpp"
#include "radreport/heads.hpp"

namespace radreport {

// Encoder plus whichever heads a task needs. Pre-training carries the MLM
// head; fine-tuned classifiers carry a head and optionally the auxiliary
// feature encoder.
template <typename S>
struct Model {
    ModelConfig config;
    EncoderParams<S> encoder;
    std::optional<MlmHeadParams<S>> mlm;
    std::optional<ClassifierHead<S>> head;
    std::optional<AuxEncoderParams<S>> aux;

    std::vector<NamedParam<S>> named_params(Model<S>* grads = nullptr);

    // Same structure, zero-filled tensors (gradient mirror).
    Model<S> like() const;
};

// Precision conversion (float training checkpoints vs double gradient
// checking).
template <typename To, typename From>
Model<To> model_cast(const Model<From>& m);

template <typename S>
Model<S> make_pretrain_model(const ModelConfig& config);

template <typename S>
Model<S> make_classifier_model(const ModelConfig& config, int64_t n_classes, bool with_aux,
                               uint64_t head_seed);

// One classification forward over a batch: encoder pooled output,
// optionally concatenated with the aux encoding, through the head.
template <typename S>
struct ClassifyState {
    EncoderCache<S> enc;
    AuxCache<S> aux;
    Tensor<S> features;  // [n, D]
    Tensor<S> probs;     // [n, C]
};

template <typename S>
void model_classify_forward(const Model<S>& model, const Batch& batch,
                            const std::vector<AuxFeatures>* aux_features, bool train_mode,
                            Rng* rng, ClassifyState<S>& state);

// Returns the mean cross-entropy and accumulates into `grads`.
template <typename S>
double model_classify_backward(const Model<S>& model, const ClassifyState<S>& state,
                               const std::vector<int32_t>& gold, Model<S>& grads);

// One MLM forward/backward pair.
template <typename S>
struct MlmState {
    EncoderCache<S> enc;
    MlmCache<S> mlm;
};

template <typename S>
double model_mlm_forward(const Model<S>& model, const Batch& batch,
                         const std::vector<int64_t>& masked_rows,
                         const std::vector<int32_t>& targets, bool train_mode, Rng* rng,
                         MlmState<S>& state);

template <typename S>
void model_mlm_backward(const Model<S>& model, const MlmState<S>& state, Model<S>& grads);

}  // namespace radreport
