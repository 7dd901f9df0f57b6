#include "veridian/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "veridian/error.hpp"
#include "veridian/random.hpp"

namespace veridian {

void TrainingConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::BadConfig, what); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (patience < 1) fail("patience must be >= 1");
    if (!(early_stop_delta >= 0.0)) fail("early_stop_delta must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must lie in (0,1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
}

void adamw_step(const NamedTensors& params, const NamedTensors& grads,
                OptimizerState& state, const TrainingConfig& cfg) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& [name, param] : params) {
        const auto git = grads.find(name);
        if (git == grads.end() || git->second.shape() != param.shape()) {
            throw Error(ErrorCode::ShapeMismatch, "gradient for " + name);
        }
        auto [mit, m_new] = state.first_moment.try_emplace(name, Tensor::zeros(param.shape()));
        auto [vit, v_new] = state.second_moment.try_emplace(name, Tensor::zeros(param.shape()));
        if (mit->second.shape() != param.shape() || vit->second.shape() != param.shape()) {
            throw Error(ErrorCode::ShapeMismatch, "optimizer state for " + name);
        }
        auto w = Tensor(param).mutable_data();
        auto m = mit->second.mutable_data();
        auto v = vit->second.mutable_data();
        const auto g = git->second.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double m_hat = mi / bias1;
            const double v_hat = vi / bias2;
            const double wi = w[i];
            w[i] = static_cast<float>(
                wi - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                                          cfg.weight_decay * wi));
        }
    }
}

EarlyStopping::EarlyStopping(std::size_t patience, double delta)
    : patience_(patience), delta_(delta) {
    if (patience < 1) {
        throw Error(ErrorCode::BadConfig, "patience must be >= 1");
    }
}

bool EarlyStopping::observe(double loss) {
    ++epochs_;
    const bool improved = loss < best_loss_ - delta_;
    last_was_best_ = loss < best_loss_;
    if (last_was_best_) {
        best_loss_ = loss;
        best_epoch_ = epochs_;
    }
    stale_ = improved ? 0 : stale_ + 1;
    return stale_ >= patience_;
}

std::string format_history(const TrainHistory& history) {
    std::string out = "epoch,train_loss,val_loss,val_accuracy\n";
    for (const auto& e : history.epochs) {
        out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.val_loss,
                           e.val_accuracy);
    }
    return out;
}

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << format_history(history);
}

LabeledSequences encode_dataset(const Dataset& ds, const Vocabulary& vocab,
                                std::size_t max_length) {
    LabeledSequences out;
    out.sequences.reserve(ds.size());
    out.labels.reserve(ds.size());
    for (const auto& rec : ds.records) {
        out.sequences.push_back(encode_text(rec.text, vocab, max_length));
        out.labels.push_back(rec.label);
    }
    return out;
}

int argmax_label(std::span<const float> row) noexcept {
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(c);
        }
    }
    return best;
}

Tensor predict_logits(const ModelParameters& model,
                      std::span<const TokenSequence> sequences, std::size_t batch_size) {
    NoGradGuard no_grad;
    const std::size_t n = sequences.size();
    const std::size_t c = model.config().num_classes;
    std::vector<float> all;
    all.reserve(n * c);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t len = std::min(batch_size, n - start);
        const Tensor logits = forward(model, sequences.subspan(start, len));
        all.insert(all.end(), logits.data().begin(), logits.data().end());
    }
    return Tensor({n, c}, std::move(all));
}

EvalResult evaluate_loss(const ModelParameters& model, const LabeledSequences& data,
                         std::size_t batch_size) {
    if (data.size() == 0) {
        throw Error(ErrorCode::EmptyDataset, "evaluate_loss on an empty dataset");
    }
    if (batch_size < 1) {
        throw Error(ErrorCode::BadConfig, "batch_size must be >= 1");
    }
    NoGradGuard no_grad;
    const std::size_t n = data.size();
    const std::size_t c = model.config().num_classes;
    const std::span<const TokenSequence> seqs(data.sequences);
    const std::span<const int> labels(data.labels);
    double total_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t len = std::min(batch_size, n - start);
        const Tensor logits = forward(model, seqs.subspan(start, len));
        const Tensor loss = ops::cross_entropy(logits, labels.subspan(start, len));
        total_loss += static_cast<double>(loss.item()) * static_cast<double>(len);
        for (std::size_t b = 0; b < len; ++b) {
            if (argmax_label(logits.data().subspan(b * c, c)) == labels[start + b]) {
                ++correct;
            }
        }
    }
    return {total_loss / static_cast<double>(n),
            static_cast<double>(correct) / static_cast<double>(n)};
}

EvalResult evaluate_loss(const ModelParameters& model, const Dataset& ds,
                         const Vocabulary& vocab, std::size_t batch_size) {
    if (ds.empty()) {
        throw Error(ErrorCode::EmptyDataset, "evaluate_loss on an empty dataset");
    }
    return evaluate_loss(model, encode_dataset(ds, vocab, model.config().max_length),
                         batch_size);
}

TrainResult train(const ModelParameters& initial, const Dataset& train_set,
                  const Dataset& val_set, const Vocabulary& vocab,
                  const TrainingConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) {
        throw Error(ErrorCode::EmptyDataset, "training set is empty");
    }
    if (val_set.empty()) {
        throw Error(ErrorCode::EmptyDataset, "validation set is empty");
    }
    if (vocab.size() > initial.config().vocab_size) {
        throw Error(ErrorCode::BadConfig,
                    "vocabulary has " + std::to_string(vocab.size()) +
                        " entries but the model embeds " +
                        std::to_string(initial.config().vocab_size));
    }
    const std::size_t max_length = initial.config().max_length;
    const LabeledSequences train_data = encode_dataset(train_set, vocab, max_length);
    const LabeledSequences val_data = encode_dataset(val_set, vocab, max_length);

    ModelParameters working = initial.clone();
    working.set_requires_grad(true);
    const NamedTensors params = working.named();
    OptimizerState optimizer;
    EarlyStopping stopper(cfg.patience, cfg.early_stop_delta);

    TrainResult result{working.clone(), {}};
    const std::size_t n = train_data.size();
    std::vector<std::size_t> order(n);
    std::vector<TokenSequence> batch_seqs;
    std::vector<int> batch_labels;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, n - start);
            batch_seqs.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < start + len; ++i) {
                batch_seqs.push_back(train_data.sequences[order[i]]);
                batch_labels.push_back(train_data.labels[order[i]]);
            }
            const Tensor logits = forward(working, batch_seqs);
            const Tensor loss = ops::cross_entropy(logits, batch_labels);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw Error(ErrorCode::DivergedLoss, "training loss is not finite", epoch);
            }
            loss_sum += value * static_cast<double>(len);
            const NamedTensors grads = backward(loss, params);
            adamw_step(params, grads, optimizer, cfg);
        }

        const EvalResult val = evaluate_loss(working, val_data, cfg.batch_size);
        if (!std::isfinite(val.loss)) {
            throw Error(ErrorCode::DivergedLoss, "validation loss is not finite", epoch);
        }
        const EpochRecord record{epoch, loss_sum / static_cast<double>(n), val.loss,
                                 val.accuracy};
        result.history.epochs.push_back(record);
        if (on_epoch) {
            on_epoch(record);
        }
        const bool stop = stopper.observe(val.loss);
        if (stopper.last_was_best()) {
            result.model = working.clone();
            result.history.best_epoch = epoch;
        }
        if (stop) {
            result.history.stopped_early = true;
            break;
        }
    }
    return result;
}

} // namespace veridian
