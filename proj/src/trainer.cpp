#include "stids/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "stids/errors.hpp"
#include "stids/rng.hpp"

namespace stids {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (round_epochs < 1) throw ConfigError("train: round_epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (the contrastive loss needs pairs)");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ConfigError("train: validation_fraction must be in [0, 1)");
    filter.validate();
}

std::string TrainConfig::to_json() const {
    json j;
    j["epochs"] = epochs;
    j["round_epochs"] = round_epochs;
    j["rounds"] = rounds;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["seed"] = seed;
    j["validation_fraction"] = validation_fraction;
    j["pseudo_in_scl"] = pseudo_in_scl;
    j["loss"] = json::parse(loss.to_json());
    j["filter"] = json::parse(filter.to_json());
    j["model"] = json::parse(model.to_json());
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config parse failure: ") + e.what());
    }
    TrainConfig c;
    if (j.contains("epochs")) c.epochs = j["epochs"].get<size_t>();
    if (j.contains("round_epochs")) c.round_epochs = j["round_epochs"].get<size_t>();
    if (j.contains("rounds")) c.rounds = j["rounds"].get<size_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<size_t>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("validation_fraction")) c.validation_fraction = j["validation_fraction"].get<double>();
    if (j.contains("pseudo_in_scl")) c.pseudo_in_scl = j["pseudo_in_scl"].get<bool>();
    if (j.contains("loss")) c.loss = LossConfig::from_json(j["loss"].dump());
    if (j.contains("filter")) c.filter = FilterConfig::from_json(j["filter"].dump());
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
    return c;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<std::vector<size_t>> make_batches(const std::vector<int>& labels, size_t batch_size,
                                              std::mt19937_64& rng) {
    const size_t n = labels.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_vec(order, rng);

    std::vector<std::vector<size_t>> batches;
    for (size_t off = 0; off < n; off += batch_size) {
        std::vector<size_t> b(order.begin() + static_cast<long>(off),
                              order.begin() + static_cast<long>(std::min(n, off + batch_size)));
        batches.push_back(std::move(b));
    }
    // A trailing singleton cannot form a contrastive pair or even a batch;
    // fold it into the previous chunk.
    if (batches.size() > 1 && batches.back().size() < 2) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }

    std::map<int, std::vector<size_t>> members;
    for (size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);

    // Patch batches that have no same-class pair by swapping in a partner
    // for some member whose class has one available.
    for (auto& batch : batches) {
        std::map<int, size_t> in_batch;
        bool has_pair = false;
        for (size_t i : batch)
            if (++in_batch[labels[i]] >= 2) has_pair = true;
        if (has_pair) continue;
        for (size_t pos = 0; pos < batch.size() && !has_pair; ++pos) {
            const int cls = labels[batch[pos]];
            const auto& pool = members[cls];
            if (pool.size() < 2) continue;
            size_t partner = batch[pos];
            while (partner == batch[pos]) partner = pool[bounded(rng, pool.size())];
            batch[(pos + 1) % batch.size()] = partner;
            has_pair = true;
        }
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Training phases
// ---------------------------------------------------------------------------

namespace {

TrainConfig resolve_config(TrainConfig cfg, const Dataset& data) {
    if (cfg.model.input_dim == 0) cfg.model.input_dim = data.dim();
    if (cfg.model.num_classes == 0) cfg.model.num_classes = data.num_classes();
    if (cfg.model.input_dim != data.dim())
        throw ConfigError("train: model input_dim does not match the dataset feature width");
    if (cfg.model.num_classes != data.num_classes())
        throw ConfigError("train: model num_classes does not match the dataset class list");
    cfg.validate();
    cfg.model.validate();
    cfg.loss.validate(cfg.model.num_classes);
    return cfg;
}

void check_trainable(const Dataset& data) {
    if (data.rows() == 0) throw std::runtime_error("train: empty dataset");
    for (int l : data.labels)
        if (l == UNLABELED) throw std::runtime_error("train: dataset contains unlabeled rows");
    for (size_t c = 0; c < data.num_classes(); ++c)
        if (data.class_counts[c] == 0)
            throw std::runtime_error("train: class '" + data.class_names[c] + "' has no samples");
}

// One optimization phase over `data`. Returns the parameters of the epoch
// with the lowest mean training loss; `params` is left at the final epoch
// so later phases can warm-start from it.
ModelParams run_phase(ModelParams& params, const Dataset& data, const TrainConfig& cfg, size_t epochs,
                      uint64_t phase_id, size_t& global_epoch, std::vector<EpochLoss>& log,
                      std::vector<std::string>& warnings) {
    size_t batch_size = cfg.batch_size;
    if (batch_size > data.rows()) {
        batch_size = data.rows();
        warnings.push_back("batch_size reduced to " + std::to_string(batch_size) +
                           " (dataset has only that many rows)");
    }

    AdamState adam = AdamState::init(params);
    auto batch_rng = seeded_rng(derive_seed(cfg.seed, 0x4241 /* batches */, phase_id));

    const bool restrict_scl = !cfg.pseudo_in_scl;
    ModelParams best = params;
    double best_loss = std::numeric_limits<double>::infinity();

    for (size_t e = 0; e < epochs; ++e) {
        auto batches = make_batches(data.labels, batch_size, batch_rng);
        double sum_scl = 0.0, sum_wce = 0.0, sum_hy = 0.0, beta = 0.0;
        for (size_t b = 0; b < batches.size(); ++b) {
            const auto& idx = batches[b];
            Matrix x = data.features.select_rows(idx);
            std::vector<int> y;
            y.reserve(idx.size());
            for (size_t i : idx) y.push_back(data.labels[i]);

            std::vector<char> scl_mask;
            const std::vector<char>* mask_ptr = nullptr;
            if (restrict_scl) {
                scl_mask.resize(idx.size());
                for (size_t i = 0; i < idx.size(); ++i)
                    scl_mask[i] = data.provenance[idx[i]] == Provenance::Original ? 1 : 0;
                mask_ptr = &scl_mask;
            }

            ForwardTrace tr = forward_batch(params, cfg.model, x, true,
                                            derive_seed(cfg.seed, phase_id, e, b));
            LossBreakdown lb = hybrid(tr.z, tr.probs, y, data.class_counts, e, epochs, cfg.loss, mask_ptr);
            ModelParams grads = backward_batch(params, cfg.model, tr, lb.grad_z, lb.grad_logits);
            adam_step(params, grads, adam, cfg.learning_rate);

            sum_scl += lb.l_scl;
            sum_wce += lb.l_wce;
            sum_hy += lb.l_hy;
            beta = lb.beta_used;
        }
        EpochLoss el;
        el.epoch = global_epoch++;
        el.l_scl = sum_scl / static_cast<double>(batches.size());
        el.l_wce = sum_wce / static_cast<double>(batches.size());
        el.l_hy = sum_hy / static_cast<double>(batches.size());
        el.beta = beta;
        log.push_back(el);
        if (el.l_hy < best_loss) {
            best_loss = el.l_hy;
            best = params;
        }
    }
    return best;
}

}  // namespace

TrainResult train_supervised(const Dataset& labeled, const TrainConfig& raw_cfg) {
    TrainConfig cfg = resolve_config(raw_cfg, labeled);
    check_trainable(labeled);

    TrainResult result;
    result.params = init_params(cfg.model);
    size_t global_epoch = 0;
    ModelParams best = run_phase(result.params, labeled, cfg, cfg.epochs, /*phase_id=*/0, global_epoch,
                                 result.log, result.warnings);
    result.params = std::move(best);
    return result;
}

namespace {

std::vector<MCPrediction> mc_over_pool(const ModelParams& params, const TrainConfig& cfg,
                                       const Dataset& unlabeled, size_t round) {
    constexpr size_t kChunk = 256;
    std::vector<MCPrediction> all;
    all.reserve(unlabeled.rows());
    for (size_t off = 0, chunk_id = 0; off < unlabeled.rows(); off += kChunk, ++chunk_id) {
        const size_t hi = std::min(unlabeled.rows(), off + kChunk);
        std::vector<size_t> idx(hi - off);
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = off + i;
        Matrix x = unlabeled.features.select_rows(idx);
        auto part = mc_predict(params, cfg.model, x, cfg.filter.mc_passes,
                               derive_seed(cfg.seed, 0x524e44 /* round */, round, chunk_id));
        for (auto& p : part) all.push_back(std::move(p));
    }
    return all;
}

std::vector<int> predict_classes(const ModelParams& params, const ModelConfig& model, const Matrix& features) {
    constexpr size_t kChunk = 512;
    std::vector<int> pred;
    pred.reserve(features.rows);
    for (size_t off = 0; off < features.rows; off += kChunk) {
        const size_t hi = std::min(features.rows, off + kChunk);
        std::vector<size_t> idx(hi - off);
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = off + i;
        Matrix x = features.select_rows(idx);
        ForwardTrace tr = forward_batch(params, model, x, false, 0);
        for (size_t r = 0; r < x.rows; ++r) {
            size_t best = 0;
            for (size_t c = 1; c < model.num_classes; ++c)
                if (tr.probs.at(r, c) > tr.probs.at(r, best)) best = c;
            pred.push_back(static_cast<int>(best));
        }
    }
    return pred;
}

}  // namespace

SelfTrainResult self_train(const Dataset& labeled, const Dataset& unlabeled, const TrainConfig& raw_cfg) {
    TrainConfig cfg = resolve_config(raw_cfg, labeled);
    check_trainable(labeled);
    if (unlabeled.rows() > 0 && unlabeled.dim() != labeled.dim())
        throw std::runtime_error("self_train: unlabeled feature width differs from labeled");

    // Optional held-out validation carved from the labeled set.
    Dataset train_set = labeled;
    Dataset val_set;
    bool has_val = false;
    if (cfg.validation_fraction > 0.0) {
        auto idx = split_indices(labeled.labels, labeled.num_classes(), cfg.validation_fraction, 1.0,
                                 derive_seed(cfg.seed, 0x56414c /* val */));
        val_set = take_rows(labeled, idx.test, false);
        std::vector<size_t> rest = idx.train_labeled;
        rest.insert(rest.end(), idx.train_unlabeled.begin(), idx.train_unlabeled.end());
        std::sort(rest.begin(), rest.end());
        train_set = take_rows(labeled, rest, false);
        has_val = true;
    }

    SelfTrainResult result;
    size_t global_epoch = 0;
    ModelParams params = init_params(cfg.model);
    ModelParams warm_best =
        run_phase(params, train_set, cfg, cfg.epochs, /*phase_id=*/0, global_epoch, result.warmup_log,
                  result.warnings);
    params = warm_best;
    result.warmup_params = params;

    if (unlabeled.rows() == 0 || cfg.rounds == 0) {
        result.params = std::move(params);
        return result;
    }

    for (size_t round = 1; round <= cfg.rounds; ++round) {
        RoundReport rep;
        rep.round = round;

        auto mc = mc_over_pool(params, cfg, unlabeled, round);
        rep.audit = score(mc, cfg.filter);
        rep.generated = rep.audit.size();

        std::vector<PseudoLabel> kept;
        for (const auto& pl : rep.audit)
            if (pl.kept) kept.push_back(pl);
        rep.kept = kept.size();

        auto capped = cap_imbalance(kept, train_set.class_counts, cfg.filter.max_imbalance_ratio,
                                    derive_seed(cfg.seed, 0x434150, round));
        rep.after_cap = capped.size();

        Dataset round_data;
        if (capped.empty()) {
            rep.warnings.push_back("no pseudo-labels survived filtering; retraining on labeled data only");
            round_data = train_set;
        } else {
            std::vector<size_t> pseudo_counts(train_set.num_classes(), 0);
            for (const auto& pl : capped) ++pseudo_counts[static_cast<size_t>(pl.predicted_class)];
            auto targets = synthesis_targets(pseudo_counts, train_set.class_counts,
                                             cfg.filter.max_imbalance_ratio);

            std::vector<size_t> rows;
            std::vector<int> classes;
            rows.reserve(capped.size());
            for (const auto& pl : capped) {
                rows.push_back(pl.sample_index);
                classes.push_back(pl.predicted_class);
            }
            Matrix pseudo_feats = unlabeled.features.select_rows(rows);
            auto smote = borderline_smote(pseudo_feats, classes, cfg.filter, targets,
                                          derive_seed(cfg.seed, 0x534d, round));
            for (auto& w : smote.warnings) rep.warnings.push_back(std::move(w));
            rep.synthetic = smote.samples.size();

            // borderline_smote reports parents as rows of its input matrix;
            // remap pseudo-label indices back into the unlabeled pool.
            std::vector<PseudoLabel> remapped = capped;
            round_data = assemble_round_dataset(train_set, unlabeled, remapped, smote.samples);
        }

        ModelParams round_best = run_phase(params, round_data, cfg, cfg.round_epochs, /*phase_id=*/round,
                                           global_epoch, rep.losses, rep.warnings);
        params = round_best;

        const Dataset& snap_on = has_val ? val_set : train_set;
        auto pred = predict_classes(params, cfg.model, snap_on.features);
        rep.snapshot = report(confusion(pred, snap_on.labels, snap_on.num_classes()));

        result.rounds.push_back(std::move(rep));
    }
    result.params = std::move(params);
    return result;
}

MetricsReport evaluate_checkpoint(const ModelParams& params, const TrainConfig& raw_cfg, const Dataset& test) {
    TrainConfig cfg = resolve_config(raw_cfg, test);
    for (int l : test.labels)
        if (l == UNLABELED) throw std::runtime_error("evaluate: test set contains unlabeled rows");
    auto pred = predict_classes(params, cfg.model, test.features);
    return report(confusion(pred, test.labels, test.num_classes()));
}

}  // namespace stids
