#include "radreport/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "radreport/corpus.hpp"
#include "radreport/fastmath.hpp"
#include "radreport/kernels.hpp"

namespace radreport {

void ModelConfig::validate() const {
    if (vocab_size < Vocab::kNumSpecials) throw ConfigError("vocab_size too small");
    if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
    if (hidden_dim <= 0 || n_layers <= 0 || n_heads <= 0 || ff_dim <= 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (hidden_dim % n_heads != 0) {
        throw ConfigError("hidden_dim must be divisible by n_heads");
    }
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
        throw ConfigError("dropout_rate must lie in [0,1)");
    }
}

void Batch::append(const TokenSequence& s) {
    if (n == 0) {
        seq = s.length();
    } else if (seq != s.length()) {
        throw std::invalid_argument("all sequences in a batch must share one length");
    }
    ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    mask.insert(mask.end(), s.attention_mask.begin(), s.attention_mask.end());
    ++n;
}

namespace {

template <typename S>
void init_weight(Tensor<S>& t, std::initializer_list<int64_t> shape, Rng& rng) {
    t.resize(shape);
    for (auto& v : t.v) v = static_cast<S>(rng.truncated_normal(0.02, 0.04));
}

template <typename S>
void init_zeros(Tensor<S>& t, std::initializer_list<int64_t> shape) {
    t.resize(shape);
}

template <typename S>
void init_ones(Tensor<S>& t, std::initializer_list<int64_t> shape) {
    t.resize(shape);
    std::fill(t.v.begin(), t.v.end(), S(1));
}

}  // namespace

template <typename S>
EncoderParams<S> init_encoder(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const int64_t v = config.vocab_size;
    const int64_t p = config.max_seq_len;
    const int64_t h = config.hidden_dim;
    const int64_t f = config.ff_dim;

    EncoderParams<S> e;
    init_weight(e.token_embedding, {v, h}, rng);
    init_weight(e.position_embedding, {p, h}, rng);
    init_ones(e.embed_gamma, {h});
    init_zeros(e.embed_beta, {h});
    e.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : e.layers) {
        init_weight(l.wq, {h, h}, rng);
        init_zeros(l.bq, {h});
        init_weight(l.wk, {h, h}, rng);
        init_zeros(l.bk, {h});
        init_weight(l.wv, {h, h}, rng);
        init_zeros(l.bv, {h});
        init_weight(l.wo, {h, h}, rng);
        init_zeros(l.bo, {h});
        init_ones(l.attn_gamma, {h});
        init_zeros(l.attn_beta, {h});
        init_weight(l.w_in, {h, f}, rng);
        init_zeros(l.b_in, {f});
        init_weight(l.w_out, {f, h}, rng);
        init_zeros(l.b_out, {h});
        init_ones(l.ffn_gamma, {h});
        init_zeros(l.ffn_beta, {h});
    }
    init_weight(e.pooler_w, {h, h}, rng);
    init_zeros(e.pooler_b, {h});
    return e;
}

int64_t encoder_param_count(const ModelConfig& config) {
    const int64_t v = config.vocab_size;
    const int64_t p = config.max_seq_len;
    const int64_t h = config.hidden_dim;
    const int64_t f = config.ff_dim;
    const int64_t per_layer = 4 * (h * h + h)    // attention projections
                              + 2 * h            // attention layer norm
                              + (h * f + f)      // ff in
                              + (f * h + h)      // ff out
                              + 2 * h;           // ffn layer norm
    return v * h + p * h + 2 * h + config.n_layers * per_layer + (h * h + h);
}

template <typename S>
EncoderParams<S> encoder_like(const EncoderParams<S>& p) {
    EncoderParams<S> g;
    auto like = [](Tensor<S>& dst, const Tensor<S>& src) { dst.resize(src.shape); };
    like(g.token_embedding, p.token_embedding);
    like(g.position_embedding, p.position_embedding);
    like(g.embed_gamma, p.embed_gamma);
    like(g.embed_beta, p.embed_beta);
    g.layers.resize(p.layers.size());
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const auto& s = p.layers[i];
        auto& d = g.layers[i];
        like(d.wq, s.wq); like(d.bq, s.bq);
        like(d.wk, s.wk); like(d.bk, s.bk);
        like(d.wv, s.wv); like(d.bv, s.bv);
        like(d.wo, s.wo); like(d.bo, s.bo);
        like(d.attn_gamma, s.attn_gamma); like(d.attn_beta, s.attn_beta);
        like(d.w_in, s.w_in); like(d.b_in, s.b_in);
        like(d.w_out, s.w_out); like(d.b_out, s.b_out);
        like(d.ffn_gamma, s.ffn_gamma); like(d.ffn_beta, s.ffn_beta);
    }
    like(g.pooler_w, p.pooler_w);
    like(g.pooler_b, p.pooler_b);
    return g;
}

template <typename S>
void encoder_named_params(EncoderParams<S>& params, EncoderParams<S>* grads,
                          std::vector<NamedParam<S>>& out) {
    auto add = [&](const std::string& name, Tensor<S>& value, Tensor<S>* grad, bool decay) {
        out.push_back({name, &value, grad, decay});
    };
    auto g = [&](Tensor<S> EncoderParams<S>::* field) -> Tensor<S>* {
        return grads ? &((*grads).*field) : nullptr;
    };
    add("encoder.token_embedding", params.token_embedding, g(&EncoderParams<S>::token_embedding),
        true);
    add("encoder.position_embedding", params.position_embedding,
        g(&EncoderParams<S>::position_embedding), true);
    add("encoder.embed_norm.gamma", params.embed_gamma, g(&EncoderParams<S>::embed_gamma), false);
    add("encoder.embed_norm.beta", params.embed_beta, g(&EncoderParams<S>::embed_beta), false);
    for (size_t i = 0; i < params.layers.size(); ++i) {
        const std::string prefix = "encoder.layer" + std::to_string(i) + ".";
        auto& l = params.layers[i];
        auto lg = [&](Tensor<S> LayerParams<S>::* field) -> Tensor<S>* {
            return grads ? &(grads->layers[i].*field) : nullptr;
        };
        add(prefix + "attn.q.weight", l.wq, lg(&LayerParams<S>::wq), true);
        add(prefix + "attn.q.bias", l.bq, lg(&LayerParams<S>::bq), false);
        add(prefix + "attn.k.weight", l.wk, lg(&LayerParams<S>::wk), true);
        add(prefix + "attn.k.bias", l.bk, lg(&LayerParams<S>::bk), false);
        add(prefix + "attn.v.weight", l.wv, lg(&LayerParams<S>::wv), true);
        add(prefix + "attn.v.bias", l.bv, lg(&LayerParams<S>::bv), false);
        add(prefix + "attn.out.weight", l.wo, lg(&LayerParams<S>::wo), true);
        add(prefix + "attn.out.bias", l.bo, lg(&LayerParams<S>::bo), false);
        add(prefix + "attn_norm.gamma", l.attn_gamma, lg(&LayerParams<S>::attn_gamma), false);
        add(prefix + "attn_norm.beta", l.attn_beta, lg(&LayerParams<S>::attn_beta), false);
        add(prefix + "ffn.in.weight", l.w_in, lg(&LayerParams<S>::w_in), true);
        add(prefix + "ffn.in.bias", l.b_in, lg(&LayerParams<S>::b_in), false);
        add(prefix + "ffn.out.weight", l.w_out, lg(&LayerParams<S>::w_out), true);
        add(prefix + "ffn.out.bias", l.b_out, lg(&LayerParams<S>::b_out), false);
        add(prefix + "ffn_norm.gamma", l.ffn_gamma, lg(&LayerParams<S>::ffn_gamma), false);
        add(prefix + "ffn_norm.beta", l.ffn_beta, lg(&LayerParams<S>::ffn_beta), false);
    }
    add("encoder.pooler.weight", params.pooler_w, g(&EncoderParams<S>::pooler_w), true);
    add("encoder.pooler.bias", params.pooler_b, g(&EncoderParams<S>::pooler_b), false);
}

// ---------------------------------------------------------------------------
// forward

namespace {

template <typename S>
void apply_dropout(Tensor<S>& x, Tensor<S>& mask_out, float rate, Rng& rng) {
    mask_out.resize(x.shape);
    const S keep_scale = S(1) / S(1.0f - rate);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const bool keep = rng.uniform() >= rate;
        mask_out.at(i) = keep ? keep_scale : S(0);
        x.at(i) *= mask_out.at(i);
    }
}

// One masked-softmax probability row: keys at PAD positions get exactly
// zero weight.
template <typename S>
void attention_prob_row(const S* q_row, const Tensor<S>& k, const std::vector<int32_t>& mask,
                        int64_t b, int64_t t, int64_t h, int64_t col, int64_t dh, S scale,
                        S* probs) {
    S max_score = S(0);
    bool any = false;
    for (int64_t j = 0; j < t; ++j) {
        if (!mask[static_cast<size_t>(b * t + j)]) continue;
        const S* kj = k.data() + (b * t + j) * h + col;
        S s = S(0);
        for (int64_t d = 0; d < dh; ++d) s += q_row[d] * kj[d];
        s *= scale;
        probs[j] = s;
        if (!any || s > max_score) max_score = s;
        any = true;
    }
    S denom = S(0);
    for (int64_t j = 0; j < t; ++j) {
        if (!mask[static_cast<size_t>(b * t + j)]) {
            probs[j] = S(0);
            continue;
        }
        probs[j] = fastmath::fast_exp(probs[j] - max_score);
        denom += probs[j];
    }
    for (int64_t j = 0; j < t; ++j) probs[j] /= denom;
}

// Scaled dot-product attention with key-side PAD masking. Probabilities
// are recomputed in the backward pass instead of being cached.
template <typename S>
void attention_forward(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                       const std::vector<int32_t>& mask, int64_t n, int64_t t, int64_t heads,
                       int64_t dh, Tensor<S>& ctx) {
    const int64_t h = heads * dh;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t hd = 0; hd < heads; ++hd) {
            std::vector<S> probs(static_cast<size_t>(t));
            const int64_t col = hd * dh;
            for (int64_t i = 0; i < t; ++i) {
                S* out = ctx.data() + (b * t + i) * h + col;
                for (int64_t d = 0; d < dh; ++d) out[d] = S(0);
                if (!mask[static_cast<size_t>(b * t + i)]) continue;  // PAD query
                const S* qi = q.data() + (b * t + i) * h + col;
                attention_prob_row(qi, k, mask, b, t, h, col, dh, scale, probs.data());
                for (int64_t j = 0; j < t; ++j) {
                    const S p = probs[static_cast<size_t>(j)];
                    if (p == S(0)) continue;
                    const S* vj = v.data() + (b * t + j) * h + col;
                    for (int64_t d = 0; d < dh; ++d) out[d] += p * vj[d];
                }
            }
        }
    }
}

template <typename S>
void attention_backward(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                        const std::vector<int32_t>& mask, int64_t n, int64_t t, int64_t heads,
                        int64_t dh, const Tensor<S>& d_ctx, Tensor<S>& dq, Tensor<S>& dk,
                        Tensor<S>& dv) {
    const int64_t h = heads * dh;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t hd = 0; hd < heads; ++hd) {
            std::vector<S> probs(static_cast<size_t>(t));
            std::vector<S> dprobs(static_cast<size_t>(t));
            const int64_t col = hd * dh;
            for (int64_t i = 0; i < t; ++i) {
                // PAD query rows carry exactly zero upstream gradient
                if (!mask[static_cast<size_t>(b * t + i)]) continue;
                const S* qi = q.data() + (b * t + i) * h + col;
                attention_prob_row(qi, k, mask, b, t, h, col, dh, scale, probs.data());

                const S* dout = d_ctx.data() + (b * t + i) * h + col;
                // dv_j += p_ij * dout ; dprobs_ij = dout . v_j
                S dot_dp_p = S(0);
                for (int64_t j = 0; j < t; ++j) {
                    const S p = probs[static_cast<size_t>(j)];
                    if (p == S(0)) {
                        dprobs[static_cast<size_t>(j)] = S(0);
                        continue;
                    }
                    const S* vj = v.data() + (b * t + j) * h + col;
                    S dp = S(0);
                    for (int64_t d = 0; d < dh; ++d) dp += dout[d] * vj[d];
                    dprobs[static_cast<size_t>(j)] = dp;
                    dot_dp_p += dp * p;
                    S* dvj = dv.data() + (b * t + j) * h + col;
                    for (int64_t d = 0; d < dh; ++d) dvj[d] += p * dout[d];
                }
                // softmax backward, then through the scaled scores
                S* dqi = dq.data() + (b * t + i) * h + col;
                for (int64_t j = 0; j < t; ++j) {
                    const S p = probs[static_cast<size_t>(j)];
                    if (p == S(0)) continue;
                    const S ds = p * (dprobs[static_cast<size_t>(j)] - dot_dp_p) * scale;
                    const S* kj = k.data() + (b * t + j) * h + col;
                    S* dkj = dk.data() + (b * t + j) * h + col;
                    for (int64_t d = 0; d < dh; ++d) {
                        dqi[d] += ds * kj[d];
                        dkj[d] += ds * qi[d];
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename S>
void encoder_forward(const EncoderParams<S>& params, const ModelConfig& config,
                     const Batch& batch, bool train_mode, Rng* rng, EncoderCache<S>& cache) {
    config.validate();
    if (batch.seq > config.max_seq_len) {
        throw std::invalid_argument("batch sequence length exceeds positional capacity");
    }
    for (int32_t id : batch.ids) {
        if (id < 0 || id >= config.vocab_size) {
            throw std::out_of_range("token id out of range: " + std::to_string(id));
        }
    }
    const bool dropout_active = train_mode && config.dropout_rate > 0.0f;
    if (dropout_active && rng == nullptr) {
        throw std::invalid_argument("train-mode forward with dropout needs an rng");
    }

    const int64_t n = batch.n;
    const int64_t t = batch.seq;
    const int64_t r = n * t;
    const int64_t h = config.hidden_dim;
    const int64_t f = config.ff_dim;
    const S ln_eps = S(1e-5);

    cache.batch = batch;
    cache.train_mode = train_mode;

    cache.emb_sum.resize({r, h});
#pragma omp parallel for schedule(static)
    for (int64_t row = 0; row < r; ++row) {
        const int64_t pos = row % t;
        const S* tok = params.token_embedding.data() +
                       static_cast<int64_t>(batch.ids[static_cast<size_t>(row)]) * h;
        const S* pe = params.position_embedding.data() + pos * h;
        S* out = cache.emb_sum.data() + row * h;
        for (int64_t d = 0; d < h; ++d) out[d] = tok[d] + pe[d];
    }

    cache.x0.resize({r, h});
    cache.emb_mean.resize({r});
    cache.emb_rstd.resize({r});
    kern::layernorm(cache.emb_sum.data(), params.embed_gamma.data(), params.embed_beta.data(),
                    cache.x0.data(), cache.emb_mean.data(), cache.emb_rstd.data(), r, h, ln_eps);

    cache.x0d = cache.x0;
    cache.emb_drop.v.clear();
    if (dropout_active) apply_dropout(cache.x0d, cache.emb_drop, config.dropout_rate, *rng);

    cache.layers.assign(static_cast<size_t>(config.n_layers), LayerCache<S>{});
    const Tensor<S>* x = &cache.x0d;
    for (int32_t li = 0; li < config.n_layers; ++li) {
        const auto& l = params.layers[static_cast<size_t>(li)];
        auto& c = cache.layers[static_cast<size_t>(li)];
        c.input = *x;

        c.q.resize({r, h});
        c.k.resize({r, h});
        c.v.resize({r, h});
        kern::matmul(c.input.data(), l.wq.data(), c.q.data(), r, h, h);
        kern::add_bias(c.q.data(), l.bq.data(), r, h);
        kern::matmul(c.input.data(), l.wk.data(), c.k.data(), r, h, h);
        kern::add_bias(c.k.data(), l.bk.data(), r, h);
        kern::matmul(c.input.data(), l.wv.data(), c.v.data(), r, h, h);
        kern::add_bias(c.v.data(), l.bv.data(), r, h);

        c.ctx.resize({r, h});
        attention_forward(c.q, c.k, c.v, batch.mask, n, t, config.n_heads, config.head_dim(),
                          c.ctx);

        c.attn_out.resize({r, h});
        kern::matmul(c.ctx.data(), l.wo.data(), c.attn_out.data(), r, h, h);
        kern::add_bias(c.attn_out.data(), l.bo.data(), r, h);

        Tensor<S> attn_dropped = c.attn_out;
        c.attn_drop.v.clear();
        if (dropout_active) apply_dropout(attn_dropped, c.attn_drop, config.dropout_rate, *rng);

        c.res1.resize({r, h});
        for (int64_t i = 0; i < r * h; ++i) c.res1.at(i) = c.input.at(i) + attn_dropped.at(i);
        c.res1_mean.resize({r});
        c.res1_rstd.resize({r});
        c.x1.resize({r, h});
        kern::layernorm(c.res1.data(), l.attn_gamma.data(), l.attn_beta.data(), c.x1.data(),
                        c.res1_mean.data(), c.res1_rstd.data(), r, h, ln_eps);

        c.ff_pre.resize({r, f});
        kern::matmul(c.x1.data(), l.w_in.data(), c.ff_pre.data(), r, h, f);
        kern::add_bias(c.ff_pre.data(), l.b_in.data(), r, f);
        c.ff_act.resize({r, f});
        kern::gelu(c.ff_pre.data(), c.ff_act.data(), r * f);
        c.ffn_out.resize({r, h});
        kern::matmul(c.ff_act.data(), l.w_out.data(), c.ffn_out.data(), r, f, h);
        kern::add_bias(c.ffn_out.data(), l.b_out.data(), r, h);

        Tensor<S> ffn_dropped = c.ffn_out;
        c.ffn_drop.v.clear();
        if (dropout_active) apply_dropout(ffn_dropped, c.ffn_drop, config.dropout_rate, *rng);

        c.res2.resize({r, h});
        for (int64_t i = 0; i < r * h; ++i) c.res2.at(i) = c.x1.at(i) + ffn_dropped.at(i);
        c.res2_mean.resize({r});
        c.res2_rstd.resize({r});
        c.x2.resize({r, h});
        kern::layernorm(c.res2.data(), l.ffn_gamma.data(), l.ffn_beta.data(), c.x2.data(),
                        c.res2_mean.data(), c.res2_rstd.data(), r, h, ln_eps);

        x = &c.x2;
    }

    // Tanh pooler over the first-token states.
    cache.pooled.resize({n, h});
    const Tensor<S>& last = *x;
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < n; ++b) {
        const S* first = last.data() + b * t * h;
        S* out = cache.pooled.data() + b * h;
        for (int64_t d = 0; d < h; ++d) {
            S acc = params.pooler_b.at(d);
            for (int64_t e = 0; e < h; ++e) acc += first[e] * params.pooler_w.at(e, d);
            out[d] = std::tanh(acc);
        }
    }
}

template <typename S>
void encoder_backward(const EncoderParams<S>& params, const ModelConfig& config,
                      const EncoderCache<S>& cache, const Tensor<S>& d_hidden,
                      const Tensor<S>& d_pooled, EncoderParams<S>& grads) {
    if (cache.batch.n == 0) throw std::invalid_argument("backward requires a cached forward");
    const int64_t n = cache.batch.n;
    const int64_t t = cache.batch.seq;
    const int64_t r = n * t;
    const int64_t h = config.hidden_dim;
    const int64_t f = config.ff_dim;

    Tensor<S> dx({r, h});
    if (d_hidden.numel() > 0) dx.v = d_hidden.v;

    // pooler
    if (d_pooled.numel() > 0) {
        Tensor<S> d_pre({n, h});
        for (int64_t b = 0; b < n; ++b) {
            for (int64_t d = 0; d < h; ++d) {
                const S y = cache.pooled.at(b, d);
                d_pre.at(b, d) = d_pooled.at(b, d) * (S(1) - y * y);
            }
        }
        const Tensor<S>& last = cache.hidden();
        // d_first = d_pre . W^T ; dW += first^T . d_pre ; db += colsum
        for (int64_t b = 0; b < n; ++b) {
            const S* first = last.data() + b * t * h;
            const S* dp = d_pre.data() + b * h;
            S* dfirst = dx.data() + b * t * h;
            for (int64_t e = 0; e < h; ++e) {
                S acc = S(0);
                for (int64_t d = 0; d < h; ++d) acc += dp[d] * params.pooler_w.at(e, d);
                dfirst[e] += acc;
            }
            for (int64_t e = 0; e < h; ++e) {
                for (int64_t d = 0; d < h; ++d) {
                    grads.pooler_w.at(e, d) += first[e] * dp[d];
                }
            }
            for (int64_t d = 0; d < h; ++d) grads.pooler_b.at(d) += dp[d];
        }
    }

    for (int32_t li = config.n_layers - 1; li >= 0; --li) {
        const auto& l = params.layers[static_cast<size_t>(li)];
        auto& gl = grads.layers[static_cast<size_t>(li)];
        const auto& c = cache.layers[static_cast<size_t>(li)];

        // x2 = LN(res2)
        Tensor<S> d_res2({r, h});
        kern::layernorm_backward_input(dx.data(), c.res2.data(), l.ffn_gamma.data(),
                                       c.res2_mean.data(), c.res2_rstd.data(), d_res2.data(), r,
                                       h);
        kern::layernorm_backward_params(dx.data(), c.res2.data(), c.res2_mean.data(),
                                        c.res2_rstd.data(), gl.ffn_gamma.data(),
                                        gl.ffn_beta.data(), r, h);

        // res2 = x1 + dropout(ffn_out)
        Tensor<S> d_ffn_out = d_res2;
        if (c.ffn_drop.numel() > 0) {
            for (int64_t i = 0; i < r * h; ++i) d_ffn_out.at(i) *= c.ffn_drop.at(i);
        }
        Tensor<S> d_x1 = d_res2;

        // ffn_out = gelu(x1 W_in + b_in) W_out + b_out
        Tensor<S> d_act({r, f});
        kern::matmul_nt(d_ffn_out.data(), l.w_out.data(), d_act.data(), r, h, f);
        kern::matmul_tn_acc(c.ff_act.data(), d_ffn_out.data(), gl.w_out.data(), r, f, h);
        kern::colsum_acc(d_ffn_out.data(), gl.b_out.data(), r, h);

        Tensor<S> d_pre({r, f});
        kern::gelu_backward(d_act.data(), c.ff_pre.data(), d_pre.data(), r * f);

        kern::matmul_tn_acc(c.x1.data(), d_pre.data(), gl.w_in.data(), r, h, f);
        kern::colsum_acc(d_pre.data(), gl.b_in.data(), r, f);
        {
            Tensor<S> tmp({r, h});
            kern::matmul_nt(d_pre.data(), l.w_in.data(), tmp.data(), r, f, h);
            for (int64_t i = 0; i < r * h; ++i) d_x1.at(i) += tmp.at(i);
        }

        // x1 = LN(res1)
        Tensor<S> d_res1({r, h});
        kern::layernorm_backward_input(d_x1.data(), c.res1.data(), l.attn_gamma.data(),
                                       c.res1_mean.data(), c.res1_rstd.data(), d_res1.data(), r,
                                       h);
        kern::layernorm_backward_params(d_x1.data(), c.res1.data(), c.res1_mean.data(),
                                        c.res1_rstd.data(), gl.attn_gamma.data(),
                                        gl.attn_beta.data(), r, h);

        // res1 = input + dropout(attn_out)
        Tensor<S> d_attn_out = d_res1;
        if (c.attn_drop.numel() > 0) {
            for (int64_t i = 0; i < r * h; ++i) d_attn_out.at(i) *= c.attn_drop.at(i);
        }
        Tensor<S> d_input = d_res1;

        // attn_out = ctx Wo + bo
        Tensor<S> d_ctx({r, h});
        kern::matmul_nt(d_attn_out.data(), l.wo.data(), d_ctx.data(), r, h, h);
        kern::matmul_tn_acc(c.ctx.data(), d_attn_out.data(), gl.wo.data(), r, h, h);
        kern::colsum_acc(d_attn_out.data(), gl.bo.data(), r, h);

        Tensor<S> dq({r, h}), dkx({r, h}), dvx({r, h});
        attention_backward(c.q, c.k, c.v, cache.batch.mask, n, t, config.n_heads,
                           config.head_dim(), d_ctx, dq, dkx, dvx);

        // projections
        kern::matmul_tn_acc(c.input.data(), dq.data(), gl.wq.data(), r, h, h);
        kern::colsum_acc(dq.data(), gl.bq.data(), r, h);
        kern::matmul_tn_acc(c.input.data(), dkx.data(), gl.wk.data(), r, h, h);
        kern::colsum_acc(dkx.data(), gl.bk.data(), r, h);
        kern::matmul_tn_acc(c.input.data(), dvx.data(), gl.wv.data(), r, h, h);
        kern::colsum_acc(dvx.data(), gl.bv.data(), r, h);

        Tensor<S> tmp({r, h});
        kern::matmul_nt(dq.data(), l.wq.data(), tmp.data(), r, h, h);
        for (int64_t i = 0; i < r * h; ++i) d_input.at(i) += tmp.at(i);
        kern::matmul_nt(dkx.data(), l.wk.data(), tmp.data(), r, h, h);
        for (int64_t i = 0; i < r * h; ++i) d_input.at(i) += tmp.at(i);
        kern::matmul_nt(dvx.data(), l.wv.data(), tmp.data(), r, h, h);
        for (int64_t i = 0; i < r * h; ++i) d_input.at(i) += tmp.at(i);

        dx = std::move(d_input);
    }

    // embedding dropout
    if (cache.emb_drop.numel() > 0) {
        for (int64_t i = 0; i < r * h; ++i) dx.at(i) *= cache.emb_drop.at(i);
    }

    // embedding layer norm
    Tensor<S> d_emb({r, h});
    kern::layernorm_backward_input(dx.data(), cache.emb_sum.data(), params.embed_gamma.data(),
                                   cache.emb_mean.data(), cache.emb_rstd.data(), d_emb.data(),
                                   r, h);
    kern::layernorm_backward_params(dx.data(), cache.emb_sum.data(), cache.emb_mean.data(),
                                    cache.emb_rstd.data(), grads.embed_gamma.data(),
                                    grads.embed_beta.data(), r, h);

    // scatter into the embedding tables (serial: rows may share an id)
    for (int64_t row = 0; row < r; ++row) {
        const int64_t id = cache.batch.ids[static_cast<size_t>(row)];
        const int64_t pos = row % t;
        const S* src = d_emb.data() + row * h;
        S* dtok = grads.token_embedding.data() + id * h;
        S* dpos = grads.position_embedding.data() + pos * h;
        for (int64_t d = 0; d < h; ++d) {
            dtok[d] += src[d];
            dpos[d] += src[d];
        }
    }
}

template <typename S>
Tensor<S> attention_probabilities(const ModelConfig& config, const EncoderCache<S>& cache,
                                  int layer) {
    const auto& c = cache.layers.at(static_cast<size_t>(layer));
    const int64_t n = cache.batch.n;
    const int64_t t = cache.batch.seq;
    const int64_t heads = config.n_heads;
    const int64_t dh = config.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Tensor<S> probs({n, heads, t, t});
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t hd = 0; hd < heads; ++hd) {
            for (int64_t i = 0; i < t; ++i) {
                const S* qi = c.q.data() + (b * t + i) * heads * dh + hd * dh;
                S* row = probs.data() + ((b * heads + hd) * t + i) * t;
                attention_prob_row(qi, c.k, cache.batch.mask, b, t, heads * dh, hd * dh, dh,
                                   scale, row);
            }
        }
    }
    return probs;
}

#define RADREPORT_INSTANTIATE_ENCODER(S)                                                      \
    template EncoderParams<S> init_encoder<S>(const ModelConfig&);                            \
    template EncoderParams<S> encoder_like<S>(const EncoderParams<S>&);                       \
    template void encoder_named_params<S>(EncoderParams<S>&, EncoderParams<S>*,              \
                                          std::vector<NamedParam<S>>&);                      \
    template void encoder_forward<S>(const EncoderParams<S>&, const ModelConfig&,            \
                                     const Batch&, bool, Rng*, EncoderCache<S>&);            \
    template void encoder_backward<S>(const EncoderParams<S>&, const ModelConfig&,           \
                                      const EncoderCache<S>&, const Tensor<S>&,              \
                                      const Tensor<S>&, EncoderParams<S>&);                  \
    template Tensor<S> attention_probabilities<S>(const ModelConfig&,                        \
                                                  const EncoderCache<S>&, int);

RADREPORT_INSTANTIATE_ENCODER(float)
RADREPORT_INSTANTIATE_ENCODER(double)

#undef RADREPORT_INSTANTIATE_ENCODER

}  // namespace radreport
