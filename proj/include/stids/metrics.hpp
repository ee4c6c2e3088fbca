#pragma once

#include <string>
#include <utility>
#include <vector>

namespace stids {

struct ConfusionMatrix {
    size_t m = 0;
    std::vector<size_t> counts;  // row-major, rows = true class, cols = predicted

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(size_t classes) : m(classes), counts(classes * classes, 0) {}
    size_t& at(size_t t, size_t p) { return counts[t * m + p]; }
    size_t at(size_t t, size_t p) const { return counts[t * m + p]; }
    size_t total() const;
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth, size_t num_classes);

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> per_class_precision;
    std::vector<bool> empty_prediction;  // classes never predicted (precision defined as 0)
    ConfusionMatrix matrix;
};

// Macro metrics are unweighted means of the per-class values; per-class F1
// is the harmonic mean of that class's precision and recall (0 when both
// are 0), and precision of a never-predicted class is 0.
MetricsReport report(const ConfusionMatrix& cm);

enum class TableFormat { Csv, Json, Text };

// One row per labeled report: Acc / Pre / Rec / F1 followed by per-class
// precision, as percentages with two decimals.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& reports, TableFormat format);

}  // namespace stids
