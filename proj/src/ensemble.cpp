#include "veridian/ensemble.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "veridian/error.hpp"

namespace veridian {

namespace {

constexpr double kWeightSumTolerance = 1e-9;
constexpr double kFileSumTolerance = 1e-6;
constexpr double kTieTolerance = 1e-12;

} // namespace

bool ProbabilityDistribution::is_valid(double tolerance) const noexcept {
    if (probs.empty()) {
        return false;
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            return false;
        }
        total += p;
    }
    return std::abs(total - 1.0) <= tolerance;
}

void EnsembleWeights::validate() const {
    if (weights.empty()) {
        throw Error(ErrorCode::InvalidWeights, "no ensemble members");
    }
    if (!member_ids.empty() && member_ids.size() != weights.size()) {
        throw Error(ErrorCode::InvalidWeights, "member id count differs from weight count");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw Error(ErrorCode::InvalidWeights, "weights must be finite and >= 0");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > kWeightSumTolerance) {
        throw Error(ErrorCode::InvalidWeights,
                    fmt::format("weights sum to {:.12f}, expected 1", total));
    }
}

EnsembleWeights EnsembleWeights::uniform(std::vector<std::string> member_ids) {
    EnsembleWeights w;
    const std::size_t n = member_ids.size();
    w.member_ids = std::move(member_ids);
    w.weights.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    return w;
}

std::vector<ProbabilityDistribution> member_probs(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw Error(ErrorCode::ShapeMismatch, "member_probs expects [B x C] logits");
    }
    NoGradGuard no_grad;
    const Tensor probs = ops::softmax(logits);
    const std::size_t rows = logits.dim(0);
    const std::size_t c = logits.dim(1);
    std::vector<ProbabilityDistribution> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = probs.data().subspan(r * c, c);
        out[r].probs.assign(row.begin(), row.end());
    }
    return out;
}

ProbabilityDistribution combine(std::span<const ProbabilityDistribution> members,
                                const EnsembleWeights& weights) {
    if (members.size() != weights.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} member distributions for {} weights", members.size(),
                                weights.size()));
    }
    weights.validate();
    const std::size_t c = members.front().probs.size();
    ProbabilityDistribution out;
    out.probs.assign(c, 0.0);
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (members[i].probs.size() != c) {
            throw Error(ErrorCode::LengthMismatch, "members disagree on class count");
        }
        for (std::size_t k = 0; k < c; ++k) {
            out.probs[k] += weights.weights[i] * members[i].probs[k];
        }
    }
    return out;
}

int predict(const ProbabilityDistribution& dist) {
    int best = 0;
    for (std::size_t c = 1; c < dist.probs.size(); ++c) {
        if (dist.probs[c] - dist.probs[static_cast<std::size_t>(best)] > kTieTolerance) {
            best = static_cast<int>(c);
        }
    }
    return best;
}

EnsembleWeights fit_weights(std::span<const double> accuracies,
                            std::vector<std::string> member_ids) {
    if (accuracies.empty()) {
        throw Error(ErrorCode::InvalidWeights, "no member accuracies");
    }
    double total = 0.0;
    for (double a : accuracies) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw Error(ErrorCode::InvalidWeights,
                        fmt::format("accuracy {} outside [0,1]", a));
        }
        total += a;
    }
    if (total <= 0.0) {
        throw Error(ErrorCode::AllZeroAccuracies, "every member accuracy is zero");
    }
    EnsembleWeights w;
    w.member_ids = std::move(member_ids);
    for (double a : accuracies) {
        w.weights.push_back(a / total);
    }
    return w;
}

std::vector<ProbabilityDistribution>
ensemble_probs_batch(std::span<const Tensor> member_logits, const EnsembleWeights& weights) {
    if (member_logits.size() != weights.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} members for {} weights", member_logits.size(),
                                weights.size()));
    }
    std::vector<std::vector<ProbabilityDistribution>> per_member;
    per_member.reserve(member_logits.size());
    for (const auto& logits : member_logits) {
        per_member.push_back(member_probs(logits));
        if (per_member.back().size() != per_member.front().size()) {
            throw Error(ErrorCode::BatchSizeMismatch, "member batches differ in size");
        }
    }
    const std::size_t rows = per_member.empty() ? 0 : per_member.front().size();
    std::vector<ProbabilityDistribution> out;
    out.reserve(rows);
    std::vector<ProbabilityDistribution> row_members(per_member.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < per_member.size(); ++i) {
            row_members[i] = per_member[i][r];
        }
        out.push_back(combine(row_members, weights));
    }
    return out;
}

std::vector<int> ensemble_predict_batch(std::span<const Tensor> member_logits,
                                        const EnsembleWeights& weights) {
    std::vector<int> labels;
    for (const auto& dist : ensemble_probs_batch(member_logits, weights)) {
        labels.push_back(predict(dist));
    }
    return labels;
}

std::string format_weights(const EnsembleWeights& weights) {
    if (weights.member_ids.size() != weights.weights.size()) {
        throw Error(ErrorCode::InvalidWeights, "weights file needs one id per weight");
    }
    std::string out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out += fmt::format("{}\t{:.17g}\n", weights.member_ids[i], weights.weights[i]);
    }
    return out;
}

EnsembleWeights parse_weights(std::string_view content) {
    EnsembleWeights w;
    std::istringstream in{std::string(content)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw Error(ErrorCode::InvalidWeights, "weights line without tab", line_no);
        }
        double value = 0.0;
        try {
            std::size_t used = 0;
            const std::string text = line.substr(tab + 1);
            value = std::stod(text, &used);
            if (used != text.size()) {
                throw std::invalid_argument(text);
            }
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidWeights, "unparsable weight", line_no);
        }
        w.member_ids.push_back(line.substr(0, tab));
        w.weights.push_back(value);
    }
    if (w.weights.empty()) {
        throw Error(ErrorCode::InvalidWeights, "weights file lists no members");
    }
    double total = 0.0;
    for (double v : w.weights) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw Error(ErrorCode::InvalidWeights, "weights must be finite and >= 0");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > kFileSumTolerance) {
        throw Error(ErrorCode::InvalidWeights,
                    fmt::format("weights sum to {:.9f}", total));
    }
    if (std::abs(total - 1.0) > kWeightSumTolerance) {
        for (double& v : w.weights) {
            v /= total;
        }
    }
    return w;
}

void save_weights(const EnsembleWeights& weights, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << format_weights(weights);
}

EnsembleWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_weights(buf.str());
}

} // namespace veridian
