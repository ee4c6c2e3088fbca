#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stids/data.hpp"
#include "stids/loss.hpp"
#include "stids/metrics.hpp"
#include "stids/model.hpp"
#include "stids/pseudolabel.hpp"

namespace stids {

// ---------------------------------------------------------------------------
// Orchestration: supervised warm-up on the labeled split, then repeated
// rounds of pseudo-label generation, filtering, rebalancing and retraining.
// ---------------------------------------------------------------------------

struct TrainConfig {
    size_t epochs = 100;        // warm-up / supervised epochs
    size_t round_epochs = 50;   // epochs per self-training retrain round
    size_t rounds = 3;          // R
    size_t batch_size = 128;
    double learning_rate = 1e-3;
    uint64_t seed = 1;
    double validation_fraction = 0.0;  // >0 carves a stratified validation split
    bool pseudo_in_scl = true;         // pseudo/synthetic rows join the contrastive term

    LossConfig loss;
    FilterConfig filter;
    ModelConfig model;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct EpochLoss {
    size_t epoch = 0;  // global epoch counter across warm-up and rounds
    double l_scl = 0.0;
    double l_wce = 0.0;
    double l_hy = 0.0;
    double beta = 0.0;
};

struct TrainResult {
    ModelParams params;           // best epoch by training loss
    std::vector<EpochLoss> log;
    std::vector<std::string> warnings;
};

TrainResult train_supervised(const Dataset& labeled, const TrainConfig& cfg);

struct RoundReport {
    size_t round = 0;                  // 1-based
    size_t generated = 0;              // pseudo-labels scored
    size_t kept = 0;                   // survived the uncertainty/confidence filter
    size_t after_cap = 0;              // survived the imbalance cap
    size_t synthetic = 0;
    std::vector<EpochLoss> losses;
    MetricsReport snapshot;            // validation split if configured, else labeled train set
    std::vector<PseudoLabel> audit;    // every generated pseudo-label with its filter verdict
    std::vector<std::string> warnings;
};

struct SelfTrainResult {
    ModelParams params;
    ModelParams warmup_params;
    std::vector<EpochLoss> warmup_log;
    std::vector<RoundReport> rounds;
    std::vector<std::string> warnings;
};

// Warm-up, then per round: MC-dropout over the unlabeled pool -> filter ->
// imbalance cap -> borderline oversampling -> retrain on the assembled set
// with fresh optimizer state and warm-started parameters. Pseudo-labels are
// regenerated from scratch each round. An empty unlabeled pool degenerates
// to plain supervised training.
SelfTrainResult self_train(const Dataset& labeled, const Dataset& unlabeled, const TrainConfig& cfg);

MetricsReport evaluate_checkpoint(const ModelParams& params, const TrainConfig& cfg, const Dataset& test);

// Deterministic epoch batching: shuffled chunks, patched so every batch
// holds at least one same-class pair whenever the data allows (the
// contrastive term is vacuous otherwise). Exposed for testing.
std::vector<std::vector<size_t>> make_batches(const std::vector<int>& labels, size_t batch_size,
                                              std::mt19937_64& rng);

}  // namespace stids
