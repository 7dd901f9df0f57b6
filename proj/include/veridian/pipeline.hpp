#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veridian/data_ingest.hpp"
#include "veridian/encoder.hpp"
#include "veridian/ensemble.hpp"
#include "veridian/metrics.hpp"
#include "veridian/training.hpp"

namespace veridian {

enum class WeightMode { accuracy_proportional, uniform, file };

std::string_view to_string(WeightMode mode) noexcept;

struct MemberSpec {
    std::string name;
    EncoderConfig encoder;
    TrainingConfig training;
};

// Flat `key = value` run description. Keys without a prefix set run-wide
// options or, for encoder/training keys, defaults for every member;
// `member.<name>.<key>` overrides one member.
struct RunConfig {
    std::filesystem::path data;
    DatasetFormat format = DatasetFormat::csv;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    std::size_t vocab_min_freq = 1;
    std::size_t vocab_max_size = 5000;
    std::vector<MemberSpec> members;
    WeightMode weight_mode = WeightMode::accuracy_proportional;
    std::filesystem::path weights_file;
    std::filesystem::path output_dir = "veridian_out";
    std::uint64_t seed = 42;
    bool parallel_members = true;

    // Throws Error(BadConfig) naming the offending key.
    void validate() const;
    // Re-derives member seeds from `seed`.
    void reseed(std::uint64_t new_seed);
};

// The three default members with the toy architecture and the per-member
// batch size / epoch budget.
std::vector<MemberSpec> default_members(std::uint64_t seed);

// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::string_view text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct MemberOutcome {
    std::string name;
    TrainHistory history;
    EvalResult validation;
    std::size_t parameter_count = 0;
};

struct TrainOutcome {
    std::vector<MemberOutcome> members;
    EnsembleWeights weights;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    std::size_t test_size = 0;
    std::size_t vocab_size = 0;
};

// Files written under RunConfig::output_dir.
namespace artifacts {
inline constexpr std::string_view vocab = "vocab.tsv";
inline constexpr std::string_view weights = "weights.tsv";
inline constexpr std::string_view run_info = "run_info.txt";
std::string checkpoint(std::string_view member);
std::string history(std::string_view member);
} // namespace artifacts

// Split into train / validation / test as run_train does.
struct Splits {
    Dataset fit;
    Dataset validation;
    Dataset test;
};
Splits make_splits(const Dataset& ds, double train_fraction, double validation_fraction,
                   std::uint64_t seed);

TrainOutcome run_train(const RunConfig& config);

enum class EvalSplit { all, test };

struct EvalOutcome {
    std::vector<NamedReport> rows; // members, then "Ensemble"
};

EvalOutcome run_eval(const std::filesystem::path& model_dir,
                     const std::filesystem::path& data, DatasetFormat format,
                     EvalSplit split = EvalSplit::all);

struct PredictOutcome {
    int label = 0;
    double p_fake = 0.0;
    std::vector<ProbabilityDistribution> member_probs;
};

PredictOutcome run_predict(const std::filesystem::path& model_dir, std::string_view text);
std::string format_prediction(const PredictOutcome& outcome);

// Table with one row per (domain, label) present plus a total row.
std::string render_stats_table(const DatasetStats& stats);

} // namespace veridian
