#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace veridian {

// Positive class is 1 (fake).
struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const noexcept { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels);

double accuracy(const ConfusionMatrix& cm);

// A zero denominator yields 0 and sets `degenerate` when given.
double precision(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double recall(const ConfusionMatrix& cm, bool* degenerate = nullptr);
double f1(double precision, double recall);

struct MetricReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t n = 0;
    bool precision_degenerate = false;
    bool recall_degenerate = false;
    ConfusionMatrix counts;
};

MetricReport classification_report(std::span<const int> preds, std::span<const int> labels);

struct NamedReport {
    std::string name;
    MetricReport report;
};

// Aligned text table: Model, Acc, P, R, F1-score as percentages.
std::string render_report_table(const std::vector<NamedReport>& rows);
// `acc,p,r,f1,n`
std::string render_report_line(const MetricReport& report);

} // namespace veridian
