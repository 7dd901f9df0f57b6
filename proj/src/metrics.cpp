#include "veridian/metrics.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "veridian/error.hpp"

namespace veridian {

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} predictions for {} labels", preds.size(), labels.size()));
    }
    if (preds.empty()) {
        throw Error(ErrorCode::LengthMismatch, "no predictions to score");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i];
        const int y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
            throw Error(ErrorCode::BadLabel, fmt::format("entry {} is not 0/1", i));
        }
        if (p == 1) {
            ++(y == 1 ? cm.tp : cm.fp);
        } else {
            ++(y == 0 ? cm.tn : cm.fn);
        }
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) {
        throw Error(ErrorCode::EmptyMatrix, "accuracy of an empty confusion matrix");
    }
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

namespace {

double safe_ratio(std::size_t num, std::size_t den, bool* degenerate) {
    if (degenerate) {
        *degenerate = den == 0;
    }
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

double precision(const ConfusionMatrix& cm, bool* degenerate) {
    return safe_ratio(cm.tp, cm.tp + cm.fp, degenerate);
}

double recall(const ConfusionMatrix& cm, bool* degenerate) {
    return safe_ratio(cm.tp, cm.tp + cm.fn, degenerate);
}

double f1(double p, double r) {
    const double s = p + r;
    return s == 0.0 ? 0.0 : 2.0 * p * r / s;
}

MetricReport classification_report(std::span<const int> preds, std::span<const int> labels) {
    MetricReport rep;
    rep.counts = confusion(preds, labels);
    rep.n = rep.counts.total();
    rep.accuracy = accuracy(rep.counts);
    rep.precision = precision(rep.counts, &rep.precision_degenerate);
    rep.recall = recall(rep.counts, &rep.recall_degenerate);
    rep.f1 = f1(rep.precision, rep.recall);
    return rep;
}

std::string render_report_table(const std::vector<NamedReport>& rows) {
    std::size_t width = 5;
    for (const auto& row : rows) {
        width = std::max(width, row.name.size());
    }
    std::string out = fmt::format("{:<{}}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}\n", "Model", width,
                                  "Acc", "P", "R", "F1-score", "n");
    for (const auto& row : rows) {
        const auto& r = row.report;
        auto pct = [](double v) { return fmt::format("{:.2f}%", 100.0 * v); };
        std::string flags;
        if (r.precision_degenerate || r.recall_degenerate) {
            flags = "  (degenerate:";
            if (r.precision_degenerate) flags += " P";
            if (r.recall_degenerate) flags += " R";
            flags += ")";
        }
        out += fmt::format("{:<{}}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}{}\n", row.name, width,
                           pct(r.accuracy), pct(r.precision), pct(r.recall), pct(r.f1), r.n,
                           flags);
    }
    return out;
}

std::string render_report_line(const MetricReport& r) {
    return fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},{}", r.accuracy, r.precision, r.recall,
                       r.f1, r.n);
}

} // namespace veridian
