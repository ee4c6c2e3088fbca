#include "stids/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stids {

size_t ConfusionMatrix::total() const {
    size_t t = 0;
    for (size_t c : counts) t += c;
    return t;
}

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth, size_t num_classes) {
    if (predicted.size() != truth.size()) throw std::runtime_error("confusion: prediction/truth length mismatch");
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < predicted.size(); ++i) {
        const int t = truth[i];
        const int p = predicted[i];
        if (t < 0 || p < 0 || static_cast<size_t>(t) >= num_classes || static_cast<size_t>(p) >= num_classes)
            throw std::runtime_error("confusion: class index out of range");
        ++cm.at(static_cast<size_t>(t), static_cast<size_t>(p));
    }
    return cm;
}

MetricsReport report(const ConfusionMatrix& cm) {
    const size_t m = cm.m;
    const size_t total = cm.total();
    if (total == 0) throw std::runtime_error("report: confusion matrix is empty");

    MetricsReport rep;
    rep.matrix = cm;
    rep.per_class_precision.resize(m);
    rep.empty_prediction.resize(m);

    size_t trace = 0;
    double sum_p = 0.0, sum_r = 0.0, sum_f1 = 0.0;
    for (size_t c = 0; c < m; ++c) {
        size_t tp = cm.at(c, c);
        trace += tp;
        size_t pred_c = 0, true_c = 0;
        for (size_t k = 0; k < m; ++k) {
            pred_c += cm.at(k, c);
            true_c += cm.at(c, k);
        }
        rep.empty_prediction[c] = pred_c == 0;
        const double prec = pred_c > 0 ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
        const double rec = true_c > 0 ? static_cast<double>(tp) / static_cast<double>(true_c) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        rep.per_class_precision[c] = prec;
        sum_p += prec;
        sum_r += rec;
        sum_f1 += f1;
    }
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    rep.macro_precision = sum_p / static_cast<double>(m);
    rep.macro_recall = sum_r / static_cast<double>(m);
    rep.macro_f1 = sum_f1 / static_cast<double>(m);
    return rep;
}

namespace {

std::string pct(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << v * 100.0;
    return ss.str();
}

}  // namespace

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& reports, TableFormat format) {
    if (reports.empty()) throw std::runtime_error("render_table: no reports");
    const size_t m = reports.front().second.per_class_precision.size();

    std::vector<std::string> header = {"Model", "Acc", "Pre", "Rec", "F1"};
    for (size_t c = 0; c < m; ++c) header.push_back(std::to_string(c));

    auto row_values = [&](const MetricsReport& r) {
        std::vector<std::string> row = {pct(r.accuracy), pct(r.macro_precision), pct(r.macro_recall),
                                        pct(r.macro_f1)};
        for (double p : r.per_class_precision) row.push_back(pct(p));
        return row;
    };

    if (format == TableFormat::Csv) {
        std::ostringstream out;
        for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
        out << "\n";
        for (const auto& [label, rep] : reports) {
            out << label;
            for (const auto& v : row_values(rep)) out << "," << v;
            out << "\n";
        }
        return out.str();
    }
    if (format == TableFormat::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [label, rep] : reports) {
            nlohmann::json row;
            row["model"] = label;
            row["acc"] = pct(rep.accuracy);
            row["pre"] = pct(rep.macro_precision);
            row["rec"] = pct(rep.macro_recall);
            row["f1"] = pct(rep.macro_f1);
            nlohmann::json per_class = nlohmann::json::array();
            for (double p : rep.per_class_precision) per_class.push_back(pct(p));
            row["class_precision"] = per_class;
            arr.push_back(row);
        }
        return arr.dump(2);
    }

    // Fixed-width text table.
    std::vector<size_t> widths(header.size());
    std::vector<std::vector<std::string>> rows;
    for (const auto& [label, rep] : reports) {
        std::vector<std::string> row = {label};
        auto vals = row_values(rep);
        row.insert(row.end(), vals.begin(), vals.end());
        rows.push_back(row);
    }
    for (size_t c = 0; c < header.size(); ++c) {
        widths[c] = header[c].size();
        for (const auto& row : rows) widths[c] = std::max(widths[c], row[c].size());
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (size_t c = 0; c < row.size(); ++c)
            out << (c ? "  " : "") << std::setw(static_cast<int>(widths[c])) << row[c];
        out << "\n";
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return out.str();
}

}  // namespace stids
