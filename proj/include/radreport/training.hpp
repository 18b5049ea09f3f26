#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "radreport/corpus.hpp"
#include "radreport/model.hpp"
#include "radreport/tokenizer.hpp"

namespace radreport {

struct TrainError : std::runtime_error {
    TrainError(const std::string& msg, int64_t at_step)
        : std::runtime_error(msg + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
    int64_t step;
};

// Previous-sentence label fed to the aux encoder while TRAINING a
// segmenter: gold teacher forcing, the model's own greedy predictions, or
// a linear gold->predicted schedule over the epochs.
enum class AuxPrevSource { Gold, Predicted, Scheduled };

struct TrainConfig {
    int32_t epochs = 4;
    int32_t batch_size = 32;
    float learning_rate = 5e-5f;
    float weight_decay = 0.01f;
    float warmup_fraction = 0.1f;
    int64_t max_steps = 0;  // pre-training step budget
    float mask_prob = 0.15f;
    int32_t seq_len = 32;
    uint64_t seed = 0;
    float grad_clip = 0.0f;           // 0 = off
    int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
    float validation_fraction = 0.1f;
    AuxPrevSource aux_prev_source = AuxPrevSource::Gold;

    void validate() const;
};

struct TrainLogEntry {
    int64_t step;
    double loss;
    double lr;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    std::vector<std::pair<int32_t, double>> validation_accuracy;  // (epoch, accuracy)

    void save_csv(const std::string& path) const;  // columns: step,loss,lr
};

// Linear warmup to the peak rate, then linear decay to 0 at the last step.
double lr_at_step(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction);

// BERT-style masking: candidates are non-special positions, each selected
// with probability mask_prob; of the selected, 80% become [MASK], 10% a
// random non-special token, 10% stay unchanged. `targets` holds the
// original id at selected positions and kIgnoreTarget elsewhere.
inline constexpr int32_t kIgnoreTarget = -1;
void mask_tokens(const TokenSequence& seq, const Vocab& vocab, float mask_prob, Rng& rng,
                 TokenSequence& masked, std::vector<int32_t>& targets);

// Adam with decoupled weight decay (never applied to bias or layer-norm
// parameters, per the `decay` flag on each NamedParam).
template <typename S>
class AdamW {
public:
    AdamW(double weight_decay, double grad_clip)
        : weight_decay_(weight_decay), grad_clip_(grad_clip) {}

    void init(const std::vector<NamedParam<S>>& params);
    void step(std::vector<NamedParam<S>>& params, double lr);

    int64_t steps_taken() const { return t_; }

private:
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-6;
    double weight_decay_;
    double grad_clip_;
    int64_t t_ = 0;
    std::vector<Tensor<S>> m_, v_;
};

// MLM pre-training over all corpus sentences. When `checkpoint_dir` is
// non-empty, snapshots land there every `checkpoint_interval` steps plus a
// final checkpoint named final.ckpt.
Model<float> pretrain(const std::vector<LabeledReport>& corpus, const Vocab& vocab,
                      const ModelConfig& model_config, const TrainConfig& config,
                      TrainLog& log, const std::string& checkpoint_dir = "");

// A classification example; `aux` is used only when the dataset says so.
struct TaskExample {
    TokenSequence tokens;
    int32_t label = 0;
    AuxFeatures aux;
};

struct TaskDataset {
    std::vector<TaskExample> items;
    int64_t n_classes = 0;
    bool with_aux = false;
};

// Fine-tunes all encoder (+aux) parameters jointly with a fresh head.
// Labels are validated against n_classes before any update.
Model<float> finetune(const TaskDataset& data, const Model<float>& base,
                      const TrainConfig& config, TrainLog& log);

// Greedy label predictions in eval mode (no dropout), batched.
std::vector<int32_t> predict_labels(const Model<float>& model, const TaskDataset& data,
                                    int batch_size = 64);

// Held-out masked-token top-1 accuracy under a fixed masking seed.
double masked_prediction_accuracy(const Model<float>& model, const Vocab& vocab,
                                  const std::vector<std::string>& texts, int seq_len,
                                  float mask_prob, uint64_t seed);

}  // namespace radreport
