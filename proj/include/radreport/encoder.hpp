#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radreport/rng.hpp"
#include "radreport/tensor.hpp"
#include "radreport/tokenizer.hpp"

namespace radreport {

struct ModelConfig {
    int32_t vocab_size = 4000;
    int32_t max_seq_len = 32;  // positional capacity
    int32_t hidden_dim = 128;
    int32_t n_layers = 2;
    int32_t n_heads = 4;
    int32_t ff_dim = 512;
    float dropout_rate = 0.1f;
    uint64_t seed = 0;

    int32_t head_dim() const { return hidden_dim / n_heads; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

template <typename S>
struct LayerParams {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<S> attn_gamma, attn_beta;
    Tensor<S> w_in, b_in;    // hidden -> ff
    Tensor<S> w_out, b_out;  // ff -> hidden
    Tensor<S> ffn_gamma, ffn_beta;
};

template <typename S>
struct EncoderParams {
    Tensor<S> token_embedding;     // [vocab, hidden]
    Tensor<S> position_embedding;  // [max_seq, hidden]
    Tensor<S> embed_gamma, embed_beta;
    std::vector<LayerParams<S>> layers;
    Tensor<S> pooler_w, pooler_b;
};

// Token-id batch, row-major [n, seq]; seq may be shorter than the model's
// positional capacity.
struct Batch {
    int64_t n = 0;
    int64_t seq = 0;
    std::vector<int32_t> ids;
    std::vector<int32_t> mask;

    void append(const TokenSequence& s);
    int64_t rows() const { return n * seq; }
};

template <typename S>
struct LayerCache {
    Tensor<S> input;                 // [R,H]
    Tensor<S> q, k, v;               // [R,H]
    Tensor<S> ctx;                   // [R,H]
    Tensor<S> attn_out;              // [R,H] after the output projection
    Tensor<S> attn_drop;             // dropout mask, empty when inactive
    Tensor<S> res1, res1_mean, res1_rstd;
    Tensor<S> x1;                    // [R,H]
    Tensor<S> ff_pre;                // [R,F]
    Tensor<S> ff_act;                // [R,F]
    Tensor<S> ffn_out;               // [R,H]
    Tensor<S> ffn_drop;
    Tensor<S> res2, res2_mean, res2_rstd;
    Tensor<S> x2;                    // [R,H] layer output
};

template <typename S>
struct EncoderCache {
    Batch batch;
    bool train_mode = false;
    Tensor<S> emb_sum;  // token + position embeddings [R,H]
    Tensor<S> emb_mean, emb_rstd;
    Tensor<S> x0;        // layer-norm output
    Tensor<S> emb_drop;  // dropout mask
    Tensor<S> x0d;       // input to the first layer
    std::vector<LayerCache<S>> layers;
    Tensor<S> pooled;  // [n,H], tanh applied

    const Tensor<S>& hidden() const { return layers.empty() ? x0d : layers.back().x2; }
};

// Gradients mirror the parameter layout.
template <typename S>
EncoderParams<S> encoder_like(const EncoderParams<S>& p);

template <typename S>
EncoderParams<S> init_encoder(const ModelConfig& config);

int64_t encoder_param_count(const ModelConfig& config);

// Appends one NamedParam per tensor; `grads` may alias a zero-initialized
// mirror created with encoder_like.
template <typename S>
void encoder_named_params(EncoderParams<S>& params, EncoderParams<S>* grads,
                          std::vector<NamedParam<S>>& out);

// Runs the full encoder stack. PAD positions receive zero attention
// weight; with `train_mode` and a positive dropout rate, `rng` drives the
// dropout draws (required in that case, ignored otherwise).
template <typename S>
void encoder_forward(const EncoderParams<S>& params, const ModelConfig& config,
                     const Batch& batch, bool train_mode, Rng* rng, EncoderCache<S>& cache);

// Accumulates parameter gradients; d_hidden is the loss gradient w.r.t.
// the final hidden states [R,H] and d_pooled w.r.t. the pooled vectors
// [n,H] (either may be empty for zero).
template <typename S>
void encoder_backward(const EncoderParams<S>& params, const ModelConfig& config,
                      const EncoderCache<S>& cache, const Tensor<S>& d_hidden,
                      const Tensor<S>& d_pooled, EncoderParams<S>& grads);

// Materializes one layer's attention probabilities [n, heads, T, T] from
// the cached projections (diagnostic only; the training path recomputes
// rows on the fly instead of storing this tensor).
template <typename S>
Tensor<S> attention_probabilities(const ModelConfig& config, const EncoderCache<S>& cache,
                                  int layer);

}  // namespace radreport
