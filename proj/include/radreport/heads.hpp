#pragma once

#include <cstdint>
#include <vector>

#include "radreport/corpus.hpp"
#include "radreport/tensor.hpp"

namespace radreport {

// ---------------------------------------------------------------------------
// auxiliary global-text features

constexpr int kAuxInputDim = 10;   // 8-slot one-hot previous label + 2 scalars
constexpr int kAuxHiddenDim = 128;
constexpr int kAuxOutputDim = 128;
constexpr int kAuxLengthCap = 64;  // report-length normalization cap

struct AuxFeatures {
    int prev_label = -1;  // SectionLabel value, -1 at the start of a report
    int32_t sentence_index = 0;
    int32_t total_sentences = 1;

    void validate() const;
};

// 3 affine layers with Tanh activations, output fixed at 128 features.
template <typename S>
struct AuxEncoderParams {
    Tensor<S> w1, b1;  // 10 -> 128
    Tensor<S> w2, b2;  // 128 -> 128
    Tensor<S> w3, b3;  // 128 -> 128
};

template <typename S>
struct AuxCache {
    Tensor<S> input;           // [n,10]
    Tensor<S> pre1, act1;      // [n,128]
    Tensor<S> pre2, act2;      // [n,128]
    Tensor<S> pre3, out;       // [n,128]
};

template <typename S>
AuxEncoderParams<S> init_aux_encoder(uint64_t seed);

template <typename S>
AuxEncoderParams<S> aux_like(const AuxEncoderParams<S>& p);

template <typename S>
void aux_named_params(AuxEncoderParams<S>& params, AuxEncoderParams<S>* grads,
                      std::vector<NamedParam<S>>& out);

template <typename S>
void aux_featurize(const AuxFeatures& aux, S* out);

template <typename S>
void aux_forward(const AuxEncoderParams<S>& params, const std::vector<AuxFeatures>& batch,
                 AuxCache<S>& cache);

template <typename S>
void aux_backward(const AuxEncoderParams<S>& params, const AuxCache<S>& cache,
                  const Tensor<S>& d_out, AuxEncoderParams<S>& grads);

// Single-feature convenience wrapper.
template <typename S>
std::vector<S> encode_aux(const AuxFeatures& aux, const AuxEncoderParams<S>& params);

// ---------------------------------------------------------------------------
// classification head

template <typename S>
struct ClassifierHead {
    Tensor<S> w;  // [feature_dim, n_classes]
    Tensor<S> b;  // [n_classes]

    int64_t feature_dim() const { return w.shape[0]; }
    int64_t n_classes() const { return w.shape[1]; }
};

template <typename S>
ClassifierHead<S> init_classifier(int64_t feature_dim, int64_t n_classes, uint64_t seed);

template <typename S>
ClassifierHead<S> head_like(const ClassifierHead<S>& p);

template <typename S>
void head_named_params(ClassifierHead<S>& params, ClassifierHead<S>* grads,
                       std::vector<NamedParam<S>>& out);

// Softmax class probabilities for a feature batch [n, feature_dim].
template <typename S>
Tensor<S> classify(const Tensor<S>& features, const ClassifierHead<S>& head);

// Single-vector variants of the spec operations.
template <typename S>
std::vector<S> classify_one(const std::vector<S>& features, const ClassifierHead<S>& head);

template <typename S>
std::vector<S> classify_with_aux(const std::vector<S>& pooled, const std::vector<S>& aux_vec,
                                 const ClassifierHead<S>& head);

// Ties resolved toward the lowest class index.
template <typename S>
int32_t argmax_class(const S* probs, int64_t n_classes);

// Mean negative log-likelihood over the batch; accumulates head gradients
// and the gradient w.r.t. the input features.
template <typename S>
double cls_loss_backward(const Tensor<S>& features, const Tensor<S>& probs,
                         const std::vector<int32_t>& gold, const ClassifierHead<S>& head,
                         ClassifierHead<S>& grads, Tensor<S>& d_features);

// Scalar spec form: loss = -ln p[gold], gradient at the logits = p - onehot.
template <typename S>
double cls_loss(const std::vector<S>& probabilities, int32_t gold,
                std::vector<S>* d_logits = nullptr);

// ---------------------------------------------------------------------------
// masked-language-model head (decoder tied to the token embedding)

template <typename S>
struct MlmHeadParams {
    Tensor<S> transform_w, transform_b;  // [H,H],[H]
    Tensor<S> norm_gamma, norm_beta;     // [H]
    Tensor<S> decoder_bias;              // [V]
};

template <typename S>
struct MlmCache {
    std::vector<int64_t> rows;      // masked row indices into hidden [R,H]
    std::vector<int32_t> targets;   // original token ids, aligned with rows
    Tensor<S> gathered;             // [M,H]
    Tensor<S> t_pre, t_act, t_norm; // [M,H]
    Tensor<S> t_mean, t_rstd;       // [M]
    Tensor<S> probs;                // [M,V]
};

template <typename S>
MlmHeadParams<S> init_mlm_head(int64_t hidden_dim, int64_t vocab_size, uint64_t seed);

template <typename S>
MlmHeadParams<S> mlm_like(const MlmHeadParams<S>& p);

template <typename S>
void mlm_named_params(MlmHeadParams<S>& params, MlmHeadParams<S>* grads,
                      std::vector<NamedParam<S>>& out);

// Mean cross-entropy over the masked positions (0 when none are masked).
template <typename S>
double mlm_loss(const Tensor<S>& hidden, const Tensor<S>& token_embedding,
                const MlmHeadParams<S>& params, const std::vector<int64_t>& masked_rows,
                const std::vector<int32_t>& target_ids, MlmCache<S>& cache);

template <typename S>
void mlm_backward(const Tensor<S>& hidden, const Tensor<S>& token_embedding,
                  const MlmHeadParams<S>& params, const MlmCache<S>& cache,
                  Tensor<S>& d_hidden, Tensor<S>& d_token_embedding, MlmHeadParams<S>& grads);

}  // namespace radreport
