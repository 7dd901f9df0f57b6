#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "veridian/data_ingest.hpp"
#include "veridian/encoder.hpp"
#include "veridian/tensor.hpp"
#include "veridian/text_pipeline.hpp"

namespace veridian {

struct TrainingConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    double early_stop_delta = 0.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct OptimizerState {
    NamedTensors first_moment;
    NamedTensors second_moment;
    std::uint64_t step = 0;
};

// One AdamW update with decoupled weight decay:
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
// `params` alias the model's storage and are updated in place.
void adamw_step(const NamedTensors& params, const NamedTensors& grads,
                OptimizerState& state, const TrainingConfig& cfg);

// Zero-delta-style early stopping on a loss that should decrease. An epoch
// counts as an improvement when loss < best - delta; after `patience`
// consecutive non-improving epochs observe() returns true.
class EarlyStopping {
public:
    EarlyStopping(std::size_t patience, double delta);

    // Returns true when training should stop after this epoch.
    bool observe(double loss);

    bool last_was_best() const noexcept { return last_was_best_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; } // 1-based
    double best_loss() const noexcept { return best_loss_; }
    std::size_t epochs_seen() const noexcept { return epochs_; }

private:
    std::size_t patience_;
    double delta_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t epochs_ = 0;
    std::size_t stale_ = 0;
    bool last_was_best_ = false;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool stopped_early = false;

    friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

// `epoch,train_loss,val_loss,val_accuracy` header plus one row per epoch,
// six decimal places.
std::string format_history(const TrainHistory& history);
void write_history(const TrainHistory& history, const std::filesystem::path& path);

struct LabeledSequences {
    std::vector<TokenSequence> sequences;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

LabeledSequences encode_dataset(const Dataset& ds, const Vocabulary& vocab,
                                std::size_t max_length);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Mean cross-entropy and argmax accuracy (ties go to class 0). Does not
// touch the parameters.
EvalResult evaluate_loss(const ModelParameters& model, const LabeledSequences& data,
                         std::size_t batch_size);
EvalResult evaluate_loss(const ModelParameters& model, const Dataset& ds,
                         const Vocabulary& vocab, std::size_t batch_size);

// Logits for every sequence, row-concatenated into [N x num_classes].
Tensor predict_logits(const ModelParameters& model,
                      std::span<const TokenSequence> sequences, std::size_t batch_size);

int argmax_label(std::span<const float> logits_row) noexcept;

struct TrainResult {
    ModelParameters model; // parameters from best_epoch
    TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const ModelParameters& initial, const Dataset& train_set,
                  const Dataset& val_set, const Vocabulary& vocab,
                  const TrainingConfig& cfg, const EpochCallback& on_epoch = {});

} // namespace veridian
