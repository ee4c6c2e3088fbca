#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stids/data.hpp"
#include "stids/model.hpp"

namespace stids {

// ---------------------------------------------------------------------------
// Pseudo-label generation: uncertainty/confidence gating of MC-dropout
// predictions, imbalance-capped downsampling toward the labeled class
// distribution, and borderline minority oversampling.
// ---------------------------------------------------------------------------

struct FilterConfig {
    double kappa = 0.05;             // uncertainty threshold (std of argmax class)
    double tau = 0.90;               // probability threshold
    size_t mc_passes = 10;           // T
    double max_imbalance_ratio = 20.0;
    size_t smote_k = 5;              // same-class interpolation neighbors
    size_t smote_m = 10;             // neighbors used for danger detection

    void validate() const;
    std::string to_json() const;
    static FilterConfig from_json(const std::string& text);
};

struct PseudoLabel {
    size_t sample_index = 0;   // row in the unlabeled pool
    int predicted_class = 0;
    double confidence = 0.0;   // max of mean_probs
    double uncertainty = 0.0;  // std of the argmax class
    bool kept = false;         // uncertainty <= kappa AND confidence >= tau
};

// Argmax ties resolve to the lowest class index. Boundary values are kept
// (both comparisons are weak inequalities).
std::vector<PseudoLabel> score(const std::vector<MCPrediction>& mc, const FilterConfig& cfg);

// Downsamples kept pseudo-labels so the class ratio stays within
// max_ratio, shaping the surviving counts toward the labeled-set
// proportions. A set already within the ratio passes through unchanged.
std::vector<PseudoLabel> cap_imbalance(const std::vector<PseudoLabel>& kept,
                                       const std::vector<size_t>& labeled_counts, double max_ratio,
                                       uint64_t seed);

// Per-class synthesis targets: lift minority classes toward the
// labeled-distribution share of the head class, and at least high enough
// that the capped ratio holds from below.
std::vector<size_t> synthesis_targets(const std::vector<size_t>& current_counts,
                                      const std::vector<size_t>& labeled_counts, double max_ratio);

struct SyntheticSample {
    std::vector<double> features;
    int cls = 0;
    std::pair<size_t, size_t> parents;  // row indices into the input sample matrix
    double gap = 0.0;                    // features = a + gap * (b - a)
};

struct SmoteResult {
    std::vector<SyntheticSample> samples;
    std::vector<std::string> warnings;
};

// Borderline oversampling: minority samples whose m-neighborhood is at
// least half other-class (but not entirely, which marks noise) are DANGER
// points; synthesis interpolates from a DANGER point toward one of its k
// nearest same-class neighbors with a uniform gap in [0, 1].
SmoteResult borderline_smote(const Matrix& samples, const std::vector<int>& classes, const FilterConfig& cfg,
                             const std::vector<size_t>& target_counts, uint64_t seed);

// Linear interpolation used for the synthetic points.
std::vector<double> interpolate(std::span<const double> a, std::span<const double> b, double gap);

// labeled rows + kept pseudo rows (features from the unlabeled pool, label =
// prediction) + synthetic rows, with provenance flags and refreshed counts.
Dataset assemble_round_dataset(const Dataset& labeled, const Dataset& unlabeled,
                               const std::vector<PseudoLabel>& pseudo,
                               const std::vector<SyntheticSample>& synthetic);

}  // namespace stids
