#pragma once

#include <set>
#include <string>
#include <vector>

#include "stids/matrix.hpp"

namespace stids {

// ---------------------------------------------------------------------------
// Hybrid objective: supervised contrastive loss over normalized embeddings
// plus a doubly-weighted cross-entropy (smooth log class weights and a
// penalty on normal/attack boundary confusions), blended by an
// epoch-decaying beta.
// ---------------------------------------------------------------------------

struct LossConfig {
    double temperature = 0.05;   // tau for the contrastive term
    double reset_alpha = 0.95;   // boundary-confusion weight, in (0,1]
    double smoothing_n = 1.0;    // n in the log class weights
    double beta_start = 0.9;
    double beta_min = 0.05;
    std::set<int> normal_classes = {0};
    std::set<int> attack_classes;   // empty = complement of normal_classes

    // Toggles for the ablation grid. With use_scl off, beta is forced to 0;
    // with the weight toggles off the cross-entropy term reduces to a plain
    // mean cross-entropy.
    bool use_scl = true;
    bool use_class_weights = true;
    bool use_reset_weights = true;

    // Literal reading of the reset-weight definition: alpha for every
    // misclassification, not only boundary-crossing ones. Correct
    // predictions keep weight 1 so the loss stays finite.
    bool literal_reset = false;

    bool is_normal(int cls) const { return normal_classes.count(cls) > 0; }
    void validate(size_t num_classes) const;
    std::string to_json() const;
    static LossConfig from_json(const std::string& text);
};

struct ClassWeights {
    std::vector<double> w;  // w_i = log(N_min + n) / log(N_i + n)
};

ClassWeights class_weights(const std::vector<size_t>& class_counts, double n);

struct SclResult {
    double value = 0.0;
    Matrix grad_z;  // dL/dz, rows matching the batch
};

// Sum over anchors of the mean over same-class positives of
// -log( exp(z_i.z_j/tau) / sum_{k != i} exp(z_i.z_k/tau) ).
// Anchors with no positive pair contribute zero. Rows must be unit length
// within 1e-4.
SclResult supervised_contrastive(const Matrix& z, const std::vector<int>& labels, double tau);

// Per-sample probabilistic reset weights from predicted vs true class.
std::vector<double> reset_weights(const std::vector<int>& predicted, const std::vector<int>& truth,
                                  const LossConfig& cfg);

struct WceResult {
    double value = 0.0;
    Matrix grad_logits;  // exact gradient through the softmax
};

WceResult weighted_ce(const Matrix& probs, const std::vector<int>& truth, const ClassWeights& weights,
                      const std::vector<double>& reset_w);

double beta_schedule(size_t epoch, size_t total_epochs, const LossConfig& cfg);

struct LossBreakdown {
    double l_scl = 0.0;
    double l_wce = 0.0;
    double l_hy = 0.0;
    double beta_used = 0.0;
    Matrix grad_z;       // beta-scaled
    Matrix grad_logits;  // (1-beta)-scaled
};

// Composite objective. `scl_rows`, when given, restricts which batch rows
// participate in the contrastive term (used when pseudo-labeled samples are
// confined to the classification loss).
LossBreakdown hybrid(const Matrix& z, const Matrix& probs, const std::vector<int>& labels,
                     const std::vector<size_t>& class_counts, size_t epoch, size_t total_epochs,
                     const LossConfig& cfg, const std::vector<char>* scl_rows = nullptr);

}  // namespace stids
