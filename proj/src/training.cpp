#include "radreport/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "radreport/checkpoint.hpp"

namespace radreport {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0f) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be non-negative");
    if (warmup_fraction < 0.0f || warmup_fraction > 1.0f) {
        throw ConfigError("warmup_fraction must lie in [0,1]");
    }
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
    if (!(mask_prob > 0.0f && mask_prob < 1.0f)) {
        throw ConfigError("mask_prob must lie in (0,1)");
    }
    if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
    if (validation_fraction < 0.0f || validation_fraction >= 1.0f) {
        throw ConfigError("validation_fraction must lie in [0,1)");
    }
}

void TrainLog::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "step,loss,lr\n";
    char buf[96];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%lld,%.8f,%.10f\n", static_cast<long long>(e.step),
                      e.loss, e.lr);
        out << buf;
    }
}

double lr_at_step(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction) {
    if (total_steps <= 0) return 0.0;
    const int64_t warmup = std::max<int64_t>(1, std::llround(warmup_fraction * total_steps));
    if (step < warmup) {
        return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (total_steps == warmup) return peak_lr;
    return peak_lr * static_cast<double>(total_steps - 1 - step) /
           static_cast<double>(total_steps - warmup);
}

void mask_tokens(const TokenSequence& seq, const Vocab& vocab, float mask_prob, Rng& rng,
                 TokenSequence& masked, std::vector<int32_t>& targets) {
    masked = seq;
    targets.assign(seq.ids.size(), kIgnoreTarget);
    const int32_t n_plain = vocab.size() - Vocab::kNumSpecials;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (vocab.is_special(seq.ids[i])) continue;
        if (!rng.bernoulli(mask_prob)) continue;
        targets[i] = seq.ids[i];
        const double u = rng.uniform();
        if (u < 0.8) {
            masked.ids[i] = Vocab::kMask;
        } else if (u < 0.9 && n_plain > 0) {
            masked.ids[i] =
                Vocab::kNumSpecials + static_cast<int32_t>(rng.bounded(static_cast<uint64_t>(n_plain)));
        }  // else: keep the original token
    }
}

// ---------------------------------------------------------------------------
// AdamW

template <typename S>
void AdamW<S>::init(const std::vector<NamedParam<S>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
        Tensor<S> zm, zv;
        zm.resize(p.value->shape);
        zv.resize(p.value->shape);
        m_.push_back(std::move(zm));
        v_.push_back(std::move(zv));
    }
    t_ = 0;
}

template <typename S>
void AdamW<S>::step(std::vector<NamedParam<S>>& params, double lr) {
    ++t_;
    double clip_scale = 1.0;
    if (grad_clip_ > 0.0) {
        double sq = 0.0;
        for (const auto& p : params) {
            for (int64_t i = 0; i < p.grad->numel(); ++i) {
                const double g = static_cast<double>(p.grad->at(i));
                sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > grad_clip_) clip_scale = grad_clip_ / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        auto& m = m_[pi];
        auto& v = v_[pi];
        const bool decay = p.decay && weight_decay_ > 0.0;
        for (int64_t i = 0; i < p.value->numel(); ++i) {
            const double g = static_cast<double>(p.grad->at(i)) * clip_scale;
            const double mi = beta1_ * static_cast<double>(m.at(i)) + (1.0 - beta1_) * g;
            const double vi = beta2_ * static_cast<double>(v.at(i)) + (1.0 - beta2_) * g * g;
            m.at(i) = static_cast<S>(mi);
            v.at(i) = static_cast<S>(vi);
            double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
            if (decay) update += weight_decay_ * static_cast<double>(p.value->at(i));
            p.value->at(i) = static_cast<S>(static_cast<double>(p.value->at(i)) - lr * update);
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

// ---------------------------------------------------------------------------
// pre-training

namespace {

std::vector<std::string> corpus_sentences(const std::vector<LabeledReport>& corpus) {
    std::vector<std::string> out;
    for (const auto& r : corpus) {
        for (const auto& s : r.sentences) {
            out.push_back(r.text.substr(static_cast<size_t>(s.begin),
                                        static_cast<size_t>(s.end - s.begin)));
        }
    }
    return out;
}

void zero_grads(std::vector<NamedParam<float>>& params) {
    for (auto& p : params) p.grad->zero();
}

}  // namespace

Model<float> pretrain(const std::vector<LabeledReport>& corpus, const Vocab& vocab,
                      const ModelConfig& model_config, const TrainConfig& config,
                      TrainLog& log, const std::string& checkpoint_dir) {
    model_config.validate();
    config.validate();
    if (config.seq_len > model_config.max_seq_len) {
        throw ConfigError("pretraining seq_len exceeds the positional capacity");
    }

    const auto texts = corpus_sentences(corpus);
    if (texts.empty()) throw ConfigError("pre-training corpus has no sentences");
    std::vector<TokenSequence> sentences;
    sentences.reserve(texts.size());
    for (const auto& t : texts) sentences.push_back(encode(t, vocab, config.seq_len));

    Model<float> model = make_pretrain_model<float>(model_config);
    Model<float> grads = model.like();
    auto params = model.named_params(&grads);

    AdamW<float> opt(config.weight_decay, config.grad_clip);
    opt.init(params);
    Rng rng(config.seed);

    std::vector<size_t> order(sentences.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // triggers a shuffle on first use

    MlmState<float> state;  // reused across steps to avoid allocation churn

    const auto snapshot = [&](const std::string& name) {
        if (checkpoint_dir.empty()) return;
        std::filesystem::create_directories(checkpoint_dir);
        save_checkpoint((std::filesystem::path(checkpoint_dir) / name).string(), model,
                        vocab.content_hash(),
                        "pretrain seed=" + std::to_string(config.seed) +
                            " steps=" + std::to_string(opt.steps_taken()));
    };

    for (int64_t step = 0; step < config.max_steps; ++step) {
        Batch batch;
        std::vector<int64_t> masked_rows;
        std::vector<int32_t> targets;
        for (int32_t b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const auto& seq = sentences[order[cursor++]];
            TokenSequence masked;
            std::vector<int32_t> t;
            mask_tokens(seq, vocab, config.mask_prob, rng, masked, t);
            batch.append(masked);
            for (size_t i = 0; i < t.size(); ++i) {
                if (t[i] != kIgnoreTarget) {
                    masked_rows.push_back(static_cast<int64_t>(b) * config.seq_len +
                                          static_cast<int64_t>(i));
                    targets.push_back(t[i]);
                }
            }
        }

        const double loss =
            model_mlm_forward(model, batch, masked_rows, targets, true, &rng, state);
        if (!std::isfinite(loss)) {
            throw TrainError("pre-training loss is not finite", step);
        }
        zero_grads(params);
        model_mlm_backward(model, state, grads);
        opt.step(params, lr_at_step(step, config.max_steps, config.learning_rate,
                                    config.warmup_fraction));
        log.entries.push_back({step, loss,
                               lr_at_step(step, config.max_steps, config.learning_rate,
                                          config.warmup_fraction)});

        if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 &&
            step + 1 < config.max_steps) {
            snapshot("step" + std::to_string(step + 1) + ".ckpt");
        }
    }

    snapshot("final.ckpt");
    return model;
}

// ---------------------------------------------------------------------------
// fine-tuning

namespace {

Batch make_batch(const TaskDataset& data, const std::vector<size_t>& idx, size_t begin,
                 size_t end, std::vector<AuxFeatures>* aux, std::vector<int32_t>* gold) {
    Batch batch;
    for (size_t i = begin; i < end; ++i) {
        const auto& ex = data.items[idx[i]];
        batch.append(ex.tokens);
        if (aux) aux->push_back(ex.aux);
        if (gold) gold->push_back(ex.label);
    }
    return batch;
}

}  // namespace

Model<float> finetune(const TaskDataset& data, const Model<float>& base,
                      const TrainConfig& config, TrainLog& log) {
    config.validate();
    if (data.n_classes < 2) throw ConfigError("task needs at least 2 classes");
    if (data.items.empty()) throw ConfigError("task dataset is empty");
    for (const auto& ex : data.items) {
        if (ex.label < 0 || ex.label >= data.n_classes) {
            throw ConfigError("task label out of range: " + std::to_string(ex.label));
        }
    }

    Model<float> model;
    model.config = base.config;
    model.encoder = base.encoder;
    if (data.with_aux) model.aux = init_aux_encoder<float>(config.seed ^ 0x9e3779b9ULL);
    const int64_t feature_dim =
        base.config.hidden_dim + (data.with_aux ? kAuxOutputDim : 0);
    model.head = init_classifier<float>(feature_dim, data.n_classes, config.seed);

    Model<float> grads = model.like();
    auto params = model.named_params(&grads);
    AdamW<float> opt(config.weight_decay, config.grad_clip);
    opt.init(params);
    Rng rng(config.seed + 1);

    // Stratified train/validation split over labels (validation only logs).
    std::vector<std::vector<size_t>> by_label(static_cast<size_t>(data.n_classes));
    for (size_t i = 0; i < data.items.size(); ++i) {
        by_label[static_cast<size_t>(data.items[i].label)].push_back(i);
    }
    std::vector<size_t> train_idx, val_idx;
    for (auto& group : by_label) {
        rng.shuffle(group);
        const size_t n_val =
            static_cast<size_t>(config.validation_fraction * static_cast<double>(group.size()));
        for (size_t i = 0; i < group.size(); ++i) {
            (i < n_val ? val_idx : train_idx).push_back(group[i]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    if (train_idx.empty()) throw ConfigError("no training items after the validation split");

    const int64_t batches_per_epoch =
        (static_cast<int64_t>(train_idx.size()) + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = static_cast<int64_t>(config.epochs) * batches_per_epoch;

    int64_t step = 0;
    ClassifyState<float> state;  // reused across steps
    for (int32_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(train_idx);
        for (size_t begin = 0; begin < train_idx.size();
             begin += static_cast<size_t>(config.batch_size)) {
            const size_t end =
                std::min(train_idx.size(), begin + static_cast<size_t>(config.batch_size));
            std::vector<AuxFeatures> aux;
            std::vector<int32_t> gold;
            Batch batch = make_batch(data, train_idx, begin, end,
                                     data.with_aux ? &aux : nullptr, &gold);

            model_classify_forward(model, batch, data.with_aux ? &aux : nullptr, true, &rng,
                                   state);
            zero_grads(params);
            const double loss = model_classify_backward(model, state, gold, grads);
            if (!std::isfinite(loss)) throw TrainError("fine-tuning loss is not finite", step);
            const double lr =
                lr_at_step(step, total_steps, config.learning_rate, config.warmup_fraction);
            opt.step(params, lr);
            log.entries.push_back({step, loss, lr});
            ++step;
        }

        if (!val_idx.empty()) {
            TaskDataset val;
            val.n_classes = data.n_classes;
            val.with_aux = data.with_aux;
            for (size_t i : val_idx) val.items.push_back(data.items[i]);
            const auto preds = predict_labels(model, val);
            int64_t correct = 0;
            for (size_t i = 0; i < preds.size(); ++i) {
                if (preds[i] == val.items[i].label) ++correct;
            }
            log.validation_accuracy.push_back(
                {epoch, static_cast<double>(correct) / static_cast<double>(preds.size())});
        }
    }
    return model;
}

std::vector<int32_t> predict_labels(const Model<float>& model, const TaskDataset& data,
                                    int batch_size) {
    std::vector<int32_t> preds;
    preds.reserve(data.items.size());
    std::vector<size_t> idx(data.items.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    ClassifyState<float> state;
    for (size_t begin = 0; begin < idx.size(); begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(idx.size(), begin + static_cast<size_t>(batch_size));
        std::vector<AuxFeatures> aux;
        Batch batch =
            make_batch(data, idx, begin, end, data.with_aux ? &aux : nullptr, nullptr);
        model_classify_forward(model, batch, data.with_aux ? &aux : nullptr, false, nullptr,
                               state);
        for (int64_t i = 0; i < state.probs.rows(); ++i) {
            preds.push_back(
                argmax_class(state.probs.data() + i * state.probs.cols(), state.probs.cols()));
        }
    }
    return preds;
}

double masked_prediction_accuracy(const Model<float>& model, const Vocab& vocab,
                                  const std::vector<std::string>& texts, int seq_len,
                                  float mask_prob, uint64_t seed) {
    Rng rng(seed);
    int64_t correct = 0;
    int64_t total = 0;
    for (size_t begin = 0; begin < texts.size(); begin += 64) {
        const size_t end = std::min(texts.size(), begin + 64);
        Batch batch;
        std::vector<int64_t> rows;
        std::vector<int32_t> targets;
        for (size_t i = begin; i < end; ++i) {
            const auto seq = encode(texts[i], vocab, seq_len);
            TokenSequence masked;
            std::vector<int32_t> t;
            mask_tokens(seq, vocab, mask_prob, rng, masked, t);
            const int64_t b = static_cast<int64_t>(batch.n);
            batch.append(masked);
            for (size_t j = 0; j < t.size(); ++j) {
                if (t[j] != kIgnoreTarget) {
                    rows.push_back(b * seq_len + static_cast<int64_t>(j));
                    targets.push_back(t[j]);
                }
            }
        }
        if (rows.empty()) continue;
        MlmState<float> state;
        model_mlm_forward(model, batch, rows, targets, false, nullptr, state);
        for (int64_t i = 0; i < static_cast<int64_t>(rows.size()); ++i) {
            const float* p = state.mlm.probs.data() + i * state.mlm.probs.cols();
            if (argmax_class(p, state.mlm.probs.cols()) == targets[static_cast<size_t>(i)]) {
                ++correct;
            }
        }
        total += static_cast<int64_t>(rows.size());
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace radreport
