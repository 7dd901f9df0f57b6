#include "veridian/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "veridian/error.hpp"
#include "veridian/log.hpp"
#include "veridian/random.hpp"
#include "veridian/text_pipeline.hpp"

namespace veridian {

std::string_view to_string(WeightMode mode) noexcept {
    switch (mode) {
    case WeightMode::accuracy_proportional: return "accuracy_proportional";
    case WeightMode::uniform: return "uniform";
    case WeightMode::file: return "file";
    }
    return "accuracy_proportional";
}

namespace artifacts {
std::string checkpoint(std::string_view member) { return std::string(member) + ".ckpt"; }
std::string history(std::string_view member) { return std::string(member) + ".history.csv"; }
} // namespace artifacts

namespace {

constexpr std::string_view kVocabFingerprintKey = "vocab_fingerprint";
constexpr std::string_view kMemberKey = "member";

// Stream ids for derive_seed.
constexpr std::uint64_t kSplitStream = 1000;
constexpr std::uint64_t kValidationStream = 1001;

MemberSpec make_member(std::string name, EncoderVariant variant, std::size_t batch,
                       std::size_t epochs) {
    MemberSpec m;
    m.name = std::move(name);
    m.encoder.variant = variant;
    m.training.batch_size = batch;
    m.training.max_epochs = epochs;
    return m;
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
    throw Error(ErrorCode::BadConfig, "key '" + key + "': " + why);
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        if (!value.empty() && value[0] == '-') {
            throw std::invalid_argument(value);
        }
        const auto v = std::stoull(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        bad_key(key, "expected a non-negative integer, got '" + value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size() || !std::isfinite(v)) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        bad_key(key, "expected a number, got '" + value + "'");
    }
}

// Applies one encoder/training key to a member; false if the key is not a
// member-level key.
bool apply_member_key(MemberSpec& m, const std::string& key, const std::string& full_key,
                      const std::string& value) {
    EncoderConfig& e = m.encoder;
    TrainingConfig& t = m.training;
    if (key == "variant") {
        try {
            e.variant = parse_variant(value);
        } catch (const Error&) {
            bad_key(full_key, "unknown variant '" + value + "'");
        }
    } else if (key == "num_layers") {
        e.num_layers = to_u64(full_key, value);
    } else if (key == "hidden") {
        e.hidden = to_u64(full_key, value);
    } else if (key == "heads") {
        e.heads = to_u64(full_key, value);
    } else if (key == "ffn_dim") {
        e.ffn_dim = to_u64(full_key, value);
    } else if (key == "embed_dim") {
        e.embed_dim = to_u64(full_key, value);
    } else if (key == "max_length") {
        e.max_length = to_u64(full_key, value);
    } else if (key == "learning_rate") {
        t.learning_rate = to_double(full_key, value);
    } else if (key == "batch_size") {
        t.batch_size = to_u64(full_key, value);
    } else if (key == "max_epochs") {
        t.max_epochs = to_u64(full_key, value);
    } else if (key == "patience") {
        t.patience = to_u64(full_key, value);
    } else if (key == "early_stop_delta") {
        t.early_stop_delta = to_double(full_key, value);
    } else if (key == "weight_decay") {
        t.weight_decay = to_double(full_key, value);
    } else if (key == "beta1") {
        t.beta1 = to_double(full_key, value);
    } else if (key == "beta2") {
        t.beta2 = to_double(full_key, value);
    } else if (key == "eps") {
        t.eps = to_double(full_key, value);
    } else {
        return false;
    }
    return true;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::string read_file(const std::filesystem::path& path, ErrorCode missing) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(missing, "cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Runs `body`, prefixing any library error with the stage name.
template <typename F> auto in_stage(std::string_view stage, F&& body) {
    try {
        return body();
    } catch (const Error& e) {
        throw Error(e.code(), std::string(stage) + ": " + e.what());
    }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }
    return kv;
}

} // namespace

std::vector<MemberSpec> default_members(std::uint64_t seed) {
    std::vector<MemberSpec> members{
        make_member("roberta", EncoderVariant::standard, 64, 15),
        make_member("xlnet", EncoderVariant::relative_position, 32, 20),
        make_member("albert", EncoderVariant::shared_layers, 32, 20),
    };
    for (std::size_t i = 0; i < members.size(); ++i) {
        members[i].encoder.seed = derive_seed(seed, 2 * i);
        members[i].training.seed = derive_seed(seed, 2 * i + 1);
    }
    return members;
}

void RunConfig::reseed(std::uint64_t new_seed) {
    seed = new_seed;
    for (std::size_t i = 0; i < members.size(); ++i) {
        members[i].encoder.seed = derive_seed(seed, 2 * i);
        members[i].training.seed = derive_seed(seed, 2 * i + 1);
    }
}

void RunConfig::validate() const {
    if (data.empty()) {
        bad_key("data", "a dataset path is required");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        bad_key("train_fraction", fmt::format("{} must lie in (0,1)", train_fraction));
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        bad_key("validation_fraction",
                fmt::format("{} must lie in (0,1)", validation_fraction));
    }
    if (vocab_min_freq < 1) {
        bad_key("vocab.min_freq", "must be >= 1");
    }
    if (vocab_max_size <= Vocabulary::reserved_count) {
        bad_key("vocab.max_size", "must exceed the 3 reserved tokens");
    }
    if (members.empty()) {
        bad_key("members", "at least one member is required");
    }
    if (weight_mode == WeightMode::file && weights_file.empty()) {
        bad_key("weights_file", "required when weight_mode = file");
    }
    for (const auto& m : members) {
        const std::string prefix = "member." + m.name;
        EncoderConfig probe = m.encoder;
        probe.vocab_size = std::max<std::size_t>(probe.vocab_size, Vocabulary::reserved_count);
        try {
            probe.validate();
            m.training.validate();
        } catch (const Error& e) {
            bad_key(prefix, e.what());
        }
    }
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') {
            continue;
        }
        // trailing comment: whitespace followed by '#'
        for (std::size_t i = 1; i < stripped.size(); ++i) {
            if (stripped[i] == '#' && std::isspace(static_cast<unsigned char>(stripped[i - 1]))) {
                stripped = trim(stripped.substr(0, i));
                break;
            }
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::BadConfig, "expected key = value", line_no);
        }
        entries.emplace_back(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }

    RunConfig cfg;
    std::vector<std::string> member_names;
    bool explicit_members = false;
    for (const auto& [key, value] : entries) {
        if (key == "members") {
            member_names = split_list(value);
            explicit_members = true;
        }
    }
    if (!explicit_members) {
        for (const auto& [key, value] : entries) {
            if (key.starts_with("member.")) {
                const auto dot = key.find('.', 7);
                if (dot == std::string::npos) {
                    bad_key(key, "expected member.<name>.<key>");
                }
                const std::string name = key.substr(7, dot - 7);
                if (std::find(member_names.begin(), member_names.end(), name) ==
                    member_names.end()) {
                    member_names.push_back(name);
                }
            }
        }
    }
    const auto defaults = default_members(0);
    if (member_names.empty()) {
        cfg.members = defaults;
    } else {
        for (const auto& name : member_names) {
            const auto it = std::find_if(defaults.begin(), defaults.end(),
                                         [&](const MemberSpec& m) { return m.name == name; });
            MemberSpec m = it != defaults.end() ? *it : MemberSpec{};
            m.name = name;
            cfg.members.push_back(std::move(m));
        }
    }

    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };

    std::optional<std::uint64_t> seed;
    // Run-wide keys and member defaults first, then member overrides.
    for (const auto& [key, value] : entries) {
        if (key == "members" || key.starts_with("member.")) {
            continue;
        }
        if (key == "data") {
            cfg.data = resolve(value);
        } else if (key == "format") {
            if (value != "csv" && value != "tsv") {
                bad_key(key, "expected csv or tsv");
            }
            cfg.format = parse_format(value);
        } else if (key == "train_fraction") {
            cfg.train_fraction = to_double(key, value);
        } else if (key == "validation_fraction") {
            cfg.validation_fraction = to_double(key, value);
        } else if (key == "vocab.min_freq") {
            cfg.vocab_min_freq = to_u64(key, value);
        } else if (key == "vocab.max_size") {
            cfg.vocab_max_size = to_u64(key, value);
        } else if (key == "weight_mode") {
            if (value == "accuracy_proportional") {
                cfg.weight_mode = WeightMode::accuracy_proportional;
            } else if (value == "uniform") {
                cfg.weight_mode = WeightMode::uniform;
            } else if (value == "file") {
                cfg.weight_mode = WeightMode::file;
            } else {
                bad_key(key, "expected accuracy_proportional, uniform or file");
            }
        } else if (key == "weights_file") {
            cfg.weights_file = resolve(value);
        } else if (key == "output_dir") {
            cfg.output_dir = resolve(value);
        } else if (key == "seed") {
            seed = to_u64(key, value);
        } else if (key == "parallel_members") {
            if (value != "true" && value != "false") {
                bad_key(key, "expected true or false");
            }
            cfg.parallel_members = value == "true";
        } else {
            bool applied = false;
            for (auto& m : cfg.members) {
                applied = apply_member_key(m, key, key, value);
            }
            if (!applied) {
                bad_key(key, "unknown key");
            }
        }
    }
    for (const auto& [key, value] : entries) {
        if (!key.starts_with("member.")) {
            continue;
        }
        const auto dot = key.find('.', 7);
        if (dot == std::string::npos) {
            bad_key(key, "expected member.<name>.<key>");
        }
        const std::string name = key.substr(7, dot - 7);
        const std::string sub = key.substr(dot + 1);
        const auto it = std::find_if(cfg.members.begin(), cfg.members.end(),
                                     [&](const MemberSpec& m) { return m.name == name; });
        if (it == cfg.members.end()) {
            bad_key(key, "member '" + name + "' is not listed in members");
        }
        if (!apply_member_key(*it, sub, key, value)) {
            bad_key(key, "unknown member key");
        }
    }
    cfg.reseed(seed.value_or(cfg.seed));
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const std::string text = read_file(path, ErrorCode::BadConfig);
    return parse_run_config(text, path.parent_path());
}

Splits make_splits(const Dataset& ds, double train_fraction, double validation_fraction,
                   std::uint64_t seed) {
    auto [train_full, test] = split_dataset(ds, train_fraction, derive_seed(seed, kSplitStream));
    if (test.empty()) {
        throw Error(ErrorCode::EmptyDataset, "test split is empty");
    }
    if (train_full.empty()) {
        throw Error(ErrorCode::EmptyDataset, "training split is empty");
    }
    auto [fit, validation] = split_dataset(train_full, 1.0 - validation_fraction,
                                           derive_seed(seed, kValidationStream));
    if (fit.empty() || validation.empty()) {
        throw Error(ErrorCode::EmptyDataset,
                    "training split too small to carve a validation set");
    }
    return {std::move(fit), std::move(validation), std::move(test)};
}

TrainOutcome run_train(const RunConfig& config) {
    config.validate();
    const Dataset ds = in_stage("load data", [&] { return load_dataset(config.data, config.format); });
    log::info(fmt::format("loaded {} reviews from {}", ds.size(), config.data.string()));
    const Splits splits = in_stage("split data", [&] {
        if (ds.empty()) {
            throw Error(ErrorCode::EmptyDataset, "dataset has no records");
        }
        return make_splits(ds, config.train_fraction, config.validation_fraction, config.seed);
    });
    const Vocabulary vocab = build_vocab(splits.fit, config.vocab_min_freq, config.vocab_max_size);
    log::info(fmt::format("split {}/{}/{} (fit/validation/test), vocabulary {} tokens",
                          splits.fit.size(), splits.validation.size(), splits.test.size(),
                          vocab.size()));

    std::filesystem::create_directories(config.output_dir);
    const auto& out = config.output_dir;
    vocab.save(out / artifacts::vocab);
    const std::string fingerprint = fmt::format("{:016x}", vocab.fingerprint());

    EnsembleWeights file_weights;
    if (config.weight_mode == WeightMode::file) {
        file_weights = in_stage("load weights", [&] { return load_weights(config.weights_file); });
        std::vector<std::string> names;
        for (const auto& m : config.members) {
            names.push_back(m.name);
        }
        if (file_weights.member_ids != names) {
            throw Error(ErrorCode::BadConfig,
                        "weights_file: member ids do not match the configured members");
        }
    }

    auto train_member = [&](const MemberSpec& spec) {
        return in_stage("train " + spec.name, [&] {
            EncoderConfig enc = spec.encoder;
            enc.vocab_size = vocab.size();
            ModelParameters init = build_encoder(enc);
            init.metadata()[std::string(kVocabFingerprintKey)] = fingerprint;
            init.metadata()[std::string(kMemberKey)] = spec.name;
            log::info(fmt::format("{}: {} encoder, {} parameters", spec.name,
                                  to_string(enc.variant), param_count(init)));
            TrainResult result =
                train(init, splits.fit, splits.validation, vocab, spec.training,
                      [&](const EpochRecord& e) {
                          log::debug(fmt::format("{} epoch {}: train {:.6f} val {:.6f} acc {:.4f}",
                                                 spec.name, e.epoch, e.train_loss, e.val_loss,
                                                 e.val_accuracy));
                      });
            MemberOutcome outcome;
            outcome.name = spec.name;
            outcome.history = result.history;
            outcome.validation =
                evaluate_loss(result.model, splits.validation, vocab, spec.training.batch_size);
            outcome.parameter_count = param_count(result.model);
            write_checkpoint(result.model, out / artifacts::checkpoint(spec.name));
            write_history(result.history, out / artifacts::history(spec.name));
            log::info(fmt::format("{}: best epoch {} of {}, validation accuracy {:.4f}",
                                  spec.name, result.history.best_epoch,
                                  result.history.epochs.size(), outcome.validation.accuracy));
            return outcome;
        });
    };

    TrainOutcome outcome;
    outcome.train_size = splits.fit.size();
    outcome.validation_size = splits.validation.size();
    outcome.test_size = splits.test.size();
    outcome.vocab_size = vocab.size();
    if (config.parallel_members && config.members.size() > 1) {
        std::vector<std::future<MemberOutcome>> jobs;
        for (const auto& spec : config.members) {
            jobs.push_back(std::async(std::launch::async, train_member, std::cref(spec)));
        }
        // Drain every job before rethrowing so no thread outlives the stack.
        std::exception_ptr first_error;
        for (auto& job : jobs) {
            try {
                outcome.members.push_back(job.get());
            } catch (...) {
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
        if (first_error) {
            std::rethrow_exception(first_error);
        }
    } else {
        for (const auto& spec : config.members) {
            outcome.members.push_back(train_member(spec));
        }
    }

    std::vector<std::string> names;
    std::vector<double> accuracies;
    for (const auto& m : outcome.members) {
        names.push_back(m.name);
        accuracies.push_back(m.validation.accuracy);
    }
    outcome.weights = in_stage("fit weights", [&] {
        switch (config.weight_mode) {
        case WeightMode::uniform: return EnsembleWeights::uniform(names);
        case WeightMode::file: return file_weights;
        case WeightMode::accuracy_proportional: break;
        }
        return fit_weights(accuracies, names);
    });
    save_weights(outcome.weights, out / artifacts::weights);

    std::string info;
    info += "data=" + config.data.string() + "\n";
    info += fmt::format("format={}\n", config.format == DatasetFormat::tsv ? "tsv" : "csv");
    info += fmt::format("train_fraction={:.17g}\n", config.train_fraction);
    info += fmt::format("validation_fraction={:.17g}\n", config.validation_fraction);
    info += fmt::format("seed={}\n", config.seed);
    info += fmt::format("weight_mode={}\n", to_string(config.weight_mode));
    write_file(out / artifacts::run_info, info);
    return outcome;
}

namespace {

struct LoadedEnsemble {
    Vocabulary vocab;
    EnsembleWeights weights;
    std::vector<ModelParameters> members;
};

LoadedEnsemble load_ensemble(const std::filesystem::path& dir) {
    return in_stage("load artifacts", [&] {
        LoadedEnsemble e;
        e.vocab = Vocabulary::load(dir / artifacts::vocab);
        e.weights = load_weights(dir / artifacts::weights);
        const std::string fingerprint = fmt::format("{:016x}", e.vocab.fingerprint());
        for (const auto& id : e.weights.member_ids) {
            ModelParameters model = read_checkpoint(dir / artifacts::checkpoint(id));
            const auto it = model.metadata().find(std::string(kVocabFingerprintKey));
            if (it == model.metadata().end() || it->second != fingerprint) {
                throw Error(ErrorCode::VocabMismatch,
                            "checkpoint " + id + " was trained with a different vocabulary");
            }
            model.set_requires_grad(false);
            e.members.push_back(std::move(model));
        }
        return e;
    });
}

} // namespace

EvalOutcome run_eval(const std::filesystem::path& model_dir,
                     const std::filesystem::path& data, DatasetFormat format, EvalSplit split) {
    const LoadedEnsemble ens = load_ensemble(model_dir);
    Dataset ds = in_stage("load data", [&] { return load_dataset(data, format); });
    if (split == EvalSplit::test) {
        ds = in_stage("split data", [&] {
            const auto info = parse_key_values(
                read_file(model_dir / artifacts::run_info, ErrorCode::MissingFile));
            auto get = [&](const char* key) {
                const auto it = info.find(key);
                if (it == info.end()) {
                    throw Error(ErrorCode::CorruptCheckpoint,
                                std::string("run_info lacks ") + key);
                }
                return it->second;
            };
            if (ds.empty()) {
                throw Error(ErrorCode::EmptyDataset, "dataset has no records");
            }
            return make_splits(ds, std::stod(get("train_fraction")),
                               std::stod(get("validation_fraction")),
                               std::stoull(get("seed")))
                .test;
        });
    }
    if (ds.empty()) {
        throw Error(ErrorCode::EmptyDataset, "evaluation data has no records");
    }

    std::vector<int> labels;
    for (const auto& r : ds.records) {
        labels.push_back(r.label);
    }
    EvalOutcome outcome;
    std::vector<Tensor> logits;
    for (std::size_t i = 0; i < ens.members.size(); ++i) {
        const auto& model = ens.members[i];
        const auto seqs = encode_dataset(ds, ens.vocab, model.config().max_length);
        logits.push_back(predict_logits(model, seqs.sequences, 64));
        std::vector<int> preds;
        for (const auto& dist : member_probs(logits.back())) {
            preds.push_back(predict(dist));
        }
        outcome.rows.push_back({ens.weights.member_ids[i], classification_report(preds, labels)});
    }
    const auto preds = ensemble_predict_batch(logits, ens.weights);
    outcome.rows.push_back({"Ensemble", classification_report(preds, labels)});
    return outcome;
}

PredictOutcome run_predict(const std::filesystem::path& model_dir, std::string_view text) {
    const LoadedEnsemble ens = load_ensemble(model_dir);
    PredictOutcome outcome;
    for (const auto& model : ens.members) {
        const TokenSequence seq = encode_text(text, ens.vocab, model.config().max_length);
        const Tensor logits = predict_logits(model, std::span(&seq, 1), 1);
        outcome.member_probs.push_back(member_probs(logits).front());
    }
    const ProbabilityDistribution combined = combine(outcome.member_probs, ens.weights);
    outcome.label = predict(combined);
    outcome.p_fake = combined[1];
    return outcome;
}

std::string format_prediction(const PredictOutcome& outcome) {
    return fmt::format("label={} p_fake={:.6f}", outcome.label, outcome.p_fake);
}

std::string render_stats_table(const DatasetStats& stats) {
    std::string out = fmt::format("{:<12}  {:<12}  {:>14}  {:>19}  {:>16}\n", "Domain",
                                  "Reviews Type", "No. of reviews", "No. of unique words",
                                  "No. of sentences");
    GroupStats total;
    for (const auto& [key, g] : stats.groups) {
        out += fmt::format("{:<12}  {:<12}  {:>14}  {:>19}  {:>16}\n", to_string(key.first),
                           key.second == 1 ? "fake" : "legitimate", g.review_count,
                           g.unique_word_count, g.sentence_count);
        total.review_count += g.review_count;
        total.sentence_count += g.sentence_count;
    }
    out += fmt::format("{:<12}  {:<12}  {:>14}  {:>19}  {:>16}\n", "total", "", total.review_count,
                       "-", total.sentence_count);
    return out;
}

} // namespace veridian
