#include "stids/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "stids/errors.hpp"

namespace stids {

using nlohmann::json;

namespace {
constexpr double kProbClamp = 1e-12;
}

void LossConfig::validate(size_t num_classes) const {
    if (!(temperature > 0.0)) throw ConfigError("loss: temperature must be > 0");
    if (!(reset_alpha > 0.0 && reset_alpha <= 1.0)) throw ConfigError("loss: reset_alpha must be in (0, 1]");
    if (!(smoothing_n > 0.0)) throw ConfigError("loss: smoothing_n must be > 0");
    if (!(beta_start >= 0.0 && beta_start <= 1.0)) throw ConfigError("loss: beta_start must be in [0, 1]");
    if (!(beta_min >= 0.0 && beta_min <= 1.0)) throw ConfigError("loss: beta_min must be in [0, 1]");
    if (num_classes > 0) {
        for (int c : normal_classes)
            if (c < 0 || static_cast<size_t>(c) >= num_classes)
                throw ConfigError("loss: normal class index out of range");
        if (!attack_classes.empty()) {
            for (size_t c = 0; c < num_classes; ++c) {
                const bool in_n = normal_classes.count(static_cast<int>(c)) > 0;
                const bool in_a = attack_classes.count(static_cast<int>(c)) > 0;
                if (in_n && in_a) throw ConfigError("loss: class in both normal and attack sets");
                if (!in_n && !in_a) throw ConfigError("loss: class in neither normal nor attack set");
            }
        }
    }
}

std::string LossConfig::to_json() const {
    json j;
    j["temperature"] = temperature;
    j["reset_alpha"] = reset_alpha;
    j["smoothing_n"] = smoothing_n;
    j["beta_start"] = beta_start;
    j["beta_min"] = beta_min;
    j["normal_classes"] = normal_classes;
    j["attack_classes"] = attack_classes;
    j["use_scl"] = use_scl;
    j["use_class_weights"] = use_class_weights;
    j["use_reset_weights"] = use_reset_weights;
    j["literal_reset"] = literal_reset;
    return j.dump(2);
}

LossConfig LossConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("loss config parse failure: ") + e.what());
    }
    LossConfig c;
    if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
    if (j.contains("reset_alpha")) c.reset_alpha = j["reset_alpha"].get<double>();
    if (j.contains("smoothing_n")) c.smoothing_n = j["smoothing_n"].get<double>();
    if (j.contains("beta_start")) c.beta_start = j["beta_start"].get<double>();
    if (j.contains("beta_min")) c.beta_min = j["beta_min"].get<double>();
    if (j.contains("normal_classes")) {
        auto v = j["normal_classes"].get<std::vector<int>>();
        c.normal_classes = std::set<int>(v.begin(), v.end());
    }
    if (j.contains("attack_classes")) {
        auto v = j["attack_classes"].get<std::vector<int>>();
        c.attack_classes = std::set<int>(v.begin(), v.end());
    }
    if (j.contains("use_scl")) c.use_scl = j["use_scl"].get<bool>();
    if (j.contains("use_class_weights")) c.use_class_weights = j["use_class_weights"].get<bool>();
    if (j.contains("use_reset_weights")) c.use_reset_weights = j["use_reset_weights"].get<bool>();
    if (j.contains("literal_reset")) c.literal_reset = j["literal_reset"].get<bool>();
    return c;
}

// ---------------------------------------------------------------------------
// Smooth class weights: w_i = log(N_min + n) / log(N_i + n)
// ---------------------------------------------------------------------------

ClassWeights class_weights(const std::vector<size_t>& class_counts, double n) {
    if (class_counts.empty()) throw std::runtime_error("class_weights: empty class counts");
    size_t n_min = class_counts[0];
    for (size_t c : class_counts) {
        if (c < 1) throw std::runtime_error("class_weights: every class count must be >= 1");
        n_min = std::min(n_min, c);
    }
    if (static_cast<double>(n_min) + n <= 1.0)
        throw std::runtime_error("class_weights: N_min + n must exceed 1 (log would be nonpositive)");
    ClassWeights out;
    out.w.reserve(class_counts.size());
    const double num = std::log(static_cast<double>(n_min) + n);
    for (size_t c : class_counts) out.w.push_back(num / std::log(static_cast<double>(c) + n));
    return out;
}

// ---------------------------------------------------------------------------
// Supervised contrastive loss
// ---------------------------------------------------------------------------

SclResult supervised_contrastive(const Matrix& z, const std::vector<int>& labels, double tau) {
    const size_t n = z.rows;
    const size_t d = z.cols;
    if (labels.size() != n) throw std::runtime_error("supervised_contrastive: label count mismatch");
    if (n < 2) throw std::runtime_error("supervised_contrastive: batch must hold at least 2 samples");
    if (!(tau > 0.0)) throw std::runtime_error("supervised_contrastive: temperature must be > 0");
    for (size_t r = 0; r < n; ++r) {
        double sq = 0.0;
        for (double v : z.row(r)) sq += v * v;
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-4)
            throw std::runtime_error("supervised_contrastive: row " + std::to_string(r) +
                                     " is not unit length");
    }

    // Similarity matrix.
    Matrix sim(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* zi = z.data.data() + i * d;
            const double* zj = z.data.data() + j * d;
            for (size_t k = 0; k < d; ++k) acc += zi[k] * zj[k];
            sim.at(i, j) = acc;
        }

    SclResult out;
    out.grad_z = Matrix(n, d);
    // dL/d sim(i,k) accumulated per anchor, then pushed into z.
    Matrix grad_sim(n, n);

    for (size_t i = 0; i < n; ++i) {
        std::vector<size_t> positives;
        for (size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) positives.push_back(j);
        if (positives.empty()) continue;  // anchor contributes nothing

        // log-sum-exp over all k != i, max-stabilized
        double mx = -1e300;
        for (size_t k = 0; k < n; ++k)
            if (k != i) mx = std::max(mx, sim.at(i, k) / tau);
        double denom = 0.0;
        for (size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(sim.at(i, k) / tau - mx);
        const double lse = mx + std::log(denom);

        double pos_mean = 0.0;
        for (size_t j : positives) pos_mean += sim.at(i, j) / tau;
        pos_mean /= static_cast<double>(positives.size());
        out.value += lse - pos_mean;

        const double inv_p = 1.0 / static_cast<double>(positives.size());
        for (size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            const double attn = std::exp(sim.at(i, k) / tau - mx) / denom;
            double gr = attn / tau;
            if (labels[k] == labels[i]) gr -= inv_p / tau;
            grad_sim.at(i, k) += gr;
        }
    }

    for (size_t i = 0; i < n; ++i)
        for (size_t k = 0; k < n; ++k) {
            const double gsim = grad_sim.at(i, k);
            if (gsim == 0.0) continue;
            double* gi = out.grad_z.data.data() + i * d;
            double* gk = out.grad_z.data.data() + k * d;
            const double* zi = z.data.data() + i * d;
            const double* zk = z.data.data() + k * d;
            for (size_t c = 0; c < d; ++c) {
                gi[c] += gsim * zk[c];
                gk[c] += gsim * zi[c];
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Probabilistic reset weights
// ---------------------------------------------------------------------------

std::vector<double> reset_weights(const std::vector<int>& predicted, const std::vector<int>& truth,
                                  const LossConfig& cfg) {
    if (predicted.size() != truth.size()) throw std::runtime_error("reset_weights: size mismatch");
    std::vector<double> out(predicted.size(), 1.0);
    for (size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] == truth[i]) continue;
        if (cfg.literal_reset) {
            out[i] = cfg.reset_alpha;  // alpha for every misclassification
        } else if (cfg.is_normal(predicted[i]) != cfg.is_normal(truth[i])) {
            out[i] = cfg.reset_alpha;  // only normal/attack boundary confusions
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weighted cross-entropy
// ---------------------------------------------------------------------------

WceResult weighted_ce(const Matrix& probs, const std::vector<int>& truth, const ClassWeights& weights,
                      const std::vector<double>& reset_w) {
    const size_t n = probs.rows;
    const size_t m = probs.cols;
    if (truth.size() != n || reset_w.size() != n) throw std::runtime_error("weighted_ce: size mismatch");
    if (weights.w.size() != m) throw std::runtime_error("weighted_ce: class weight count mismatch");

    WceResult out;
    out.grad_logits = Matrix(n, m);
    const double inv_k = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const int y = truth[i];
        if (y < 0 || static_cast<size_t>(y) >= m) throw std::runtime_error("weighted_ce: label out of range");
        const double wp = reset_w[i];
        if (!(wp > 0.0 && wp <= 1.0)) throw std::runtime_error("weighted_ce: reset weight must be in (0, 1]");
        const double wy = weights.w[static_cast<size_t>(y)];
        const double p_true = probs.at(i, static_cast<size_t>(y));
        const bool clamped = p_true < kProbClamp;
        out.value += -wy * std::log(wp * std::max(p_true, kProbClamp)) * inv_k;
        if (!clamped) {
            for (size_t c = 0; c < m; ++c) {
                double g = probs.at(i, c);
                if (c == static_cast<size_t>(y)) g -= 1.0;
                out.grad_logits.at(i, c) = wy * g * inv_k;
            }
        }
        // In the clamped region the log term is constant, so the gradient
        // through the softmax is zero.
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schedule and composition
// ---------------------------------------------------------------------------

double beta_schedule(size_t epoch, size_t total_epochs, const LossConfig& cfg) {
    if (total_epochs < 1) throw std::runtime_error("beta_schedule: total_epochs must be >= 1");
    if (!cfg.use_scl) return 0.0;
    const double b = cfg.beta_start / (1.0 + static_cast<double>(epoch));
    return std::max(cfg.beta_min, b);
}

LossBreakdown hybrid(const Matrix& z, const Matrix& probs, const std::vector<int>& labels,
                     const std::vector<size_t>& class_counts, size_t epoch, size_t total_epochs,
                     const LossConfig& cfg, const std::vector<char>* scl_rows) {
    const size_t n = probs.rows;
    const size_t m = probs.cols;
    if (z.rows != n || labels.size() != n) throw std::runtime_error("hybrid: batch size mismatch");

    LossBreakdown out;
    out.beta_used = beta_schedule(epoch, total_epochs, cfg);

    // Contrastive component (possibly on a subset of rows).
    out.grad_z = Matrix(n, z.cols);
    if (scl_rows == nullptr) {
        auto scl = supervised_contrastive(z, labels, cfg.temperature);
        out.l_scl = scl.value;
        if (out.beta_used != 0.0)
            for (size_t i = 0; i < out.grad_z.data.size(); ++i)
                out.grad_z.data[i] = out.beta_used * scl.grad_z.data[i];
    } else {
        if (scl_rows->size() != n) throw std::runtime_error("hybrid: scl_rows size mismatch");
        std::vector<size_t> rows;
        for (size_t i = 0; i < n; ++i)
            if ((*scl_rows)[i]) rows.push_back(i);
        if (rows.size() >= 2) {
            Matrix z_sub = z.select_rows(rows);
            std::vector<int> lab_sub;
            lab_sub.reserve(rows.size());
            for (size_t i : rows) lab_sub.push_back(labels[i]);
            auto scl = supervised_contrastive(z_sub, lab_sub, cfg.temperature);
            out.l_scl = scl.value;
            if (out.beta_used != 0.0)
                for (size_t r = 0; r < rows.size(); ++r)
                    for (size_t c = 0; c < z.cols; ++c)
                        out.grad_z.at(rows[r], c) = out.beta_used * scl.grad_z.at(r, c);
        }
    }

    // Classification component.
    ClassWeights w;
    if (cfg.use_class_weights) {
        w = class_weights(class_counts, cfg.smoothing_n);
    } else {
        w.w.assign(m, 1.0);
    }
    std::vector<int> predicted(n);
    for (size_t i = 0; i < n; ++i) {
        size_t best = 0;
        for (size_t c = 1; c < m; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        predicted[i] = static_cast<int>(best);
    }
    std::vector<double> wp;
    if (cfg.use_reset_weights) {
        wp = reset_weights(predicted, labels, cfg);
    } else {
        wp.assign(n, 1.0);
    }
    auto wce = weighted_ce(probs, labels, w, wp);
    out.l_wce = wce.value;
    out.grad_logits = Matrix(n, m);
    const double ce_scale = 1.0 - out.beta_used;
    if (ce_scale != 0.0)
        for (size_t i = 0; i < out.grad_logits.data.size(); ++i)
            out.grad_logits.data[i] = ce_scale * wce.grad_logits.data[i];

    out.l_hy = (1.0 - out.beta_used) * out.l_wce + out.beta_used * out.l_scl;
    return out;
}

}  // namespace stids
