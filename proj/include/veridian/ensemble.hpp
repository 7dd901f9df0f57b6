#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "veridian/tensor.hpp"

namespace veridian {

// Class probabilities; index 0 = genuine, 1 = fake.
struct ProbabilityDistribution {
    std::vector<double> probs;

    bool is_valid(double tolerance = 1e-6) const noexcept;
    double operator[](std::size_t c) const { return probs.at(c); }
};

struct EnsembleWeights {
    std::vector<std::string> member_ids;
    std::vector<double> weights;

    std::size_t size() const noexcept { return weights.size(); }
    // Throws InvalidWeights unless every weight >= 0 and they sum to 1
    // within 1e-9, and ids (when given) match the weight count.
    void validate() const;

    static EnsembleWeights uniform(std::vector<std::string> member_ids);
};

// Row-wise softmax of [B x C] logits.
std::vector<ProbabilityDistribution> member_probs(const Tensor& logits);

// out[c] = sum_i w_i * p_i[c]
ProbabilityDistribution combine(std::span<const ProbabilityDistribution> members,
                                const EnsembleWeights& weights);

// Argmax; a later class must beat the current best by more than 1e-12, so
// exact ties resolve to the lower class (0 = genuine).
int predict(const ProbabilityDistribution& dist);

// w_i = acc_i / sum_j acc_j
EnsembleWeights fit_weights(std::span<const double> member_accuracies,
                            std::vector<std::string> member_ids = {});

// Per-row combined distributions for B rows of every member.
std::vector<ProbabilityDistribution>
ensemble_probs_batch(std::span<const Tensor> member_logits, const EnsembleWeights& weights);

std::vector<int> ensemble_predict_batch(std::span<const Tensor> member_logits,
                                        const EnsembleWeights& weights);

// `member_id<TAB>weight` per line.
std::string format_weights(const EnsembleWeights& weights);
// Sums within 1e-9 of 1 are kept as written, within 1e-6 re-normalized,
// anything else rejected.
EnsembleWeights parse_weights(std::string_view content);
void save_weights(const EnsembleWeights& weights, const std::filesystem::path& path);
EnsembleWeights load_weights(const std::filesystem::path& path);

} // namespace veridian
