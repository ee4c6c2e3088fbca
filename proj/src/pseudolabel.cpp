#include "stids/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "stids/errors.hpp"
#include "stids/rng.hpp"

namespace stids {

using nlohmann::json;

void FilterConfig::validate() const {
    if (kappa < 0.0) throw ConfigError("filter: kappa must be >= 0");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("filter: tau must be in (0, 1]");
    if (mc_passes < 1) throw ConfigError("filter: mc_passes must be >= 1");
    if (max_imbalance_ratio < 1.0) throw ConfigError("filter: max_imbalance_ratio must be >= 1");
    if (smote_k < 1 || smote_m < 1) throw ConfigError("filter: smote neighbor counts must be >= 1");
}

std::string FilterConfig::to_json() const {
    json j;
    j["kappa"] = kappa;
    j["tau"] = tau;
    j["mc_passes"] = mc_passes;
    j["max_imbalance_ratio"] = max_imbalance_ratio;
    j["smote_k"] = smote_k;
    j["smote_m"] = smote_m;
    return j.dump(2);
}

FilterConfig FilterConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("filter config parse failure: ") + e.what());
    }
    FilterConfig c;
    if (j.contains("kappa")) c.kappa = j["kappa"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("mc_passes")) c.mc_passes = j["mc_passes"].get<size_t>();
    if (j.contains("max_imbalance_ratio")) c.max_imbalance_ratio = j["max_imbalance_ratio"].get<double>();
    if (j.contains("smote_k")) c.smote_k = j["smote_k"].get<size_t>();
    if (j.contains("smote_m")) c.smote_m = j["smote_m"].get<size_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

std::vector<PseudoLabel> score(const std::vector<MCPrediction>& mc, const FilterConfig& cfg) {
    std::vector<PseudoLabel> out;
    out.reserve(mc.size());
    for (size_t i = 0; i < mc.size(); ++i) {
        const auto& p = mc[i];
        if (p.mean_probs.empty() || p.mean_probs.size() != p.std_dev.size())
            throw std::runtime_error("score: malformed MC prediction");
        size_t best = 0;
        for (size_t c = 1; c < p.mean_probs.size(); ++c)
            if (p.mean_probs[c] > p.mean_probs[best]) best = c;  // ties keep the lowest index
        PseudoLabel pl;
        pl.sample_index = i;
        pl.predicted_class = static_cast<int>(best);
        pl.confidence = p.mean_probs[best];
        pl.uncertainty = p.std_dev[best];
        pl.kept = (pl.uncertainty <= cfg.kappa) && (pl.confidence >= cfg.tau);
        out.push_back(pl);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Imbalance cap
// ---------------------------------------------------------------------------

namespace {

std::map<int, std::vector<size_t>> group_by_class(const std::vector<PseudoLabel>& pls) {
    std::map<int, std::vector<size_t>> groups;
    for (size_t i = 0; i < pls.size(); ++i) groups[pls[i].predicted_class].push_back(i);
    return groups;
}

double count_ratio(const std::map<int, std::vector<size_t>>& groups) {
    size_t mx = 0, mn = SIZE_MAX;
    for (const auto& [cls, idx] : groups) {
        (void)cls;
        mx = std::max(mx, idx.size());
        mn = std::min(mn, idx.size());
    }
    if (mn == 0 || mn == SIZE_MAX) return 1.0;
    return static_cast<double>(mx) / static_cast<double>(mn);
}

}  // namespace

std::vector<PseudoLabel> cap_imbalance(const std::vector<PseudoLabel>& kept,
                                       const std::vector<size_t>& labeled_counts, double max_ratio,
                                       uint64_t seed) {
    if (max_ratio < 1.0) throw std::runtime_error("cap_imbalance: max_ratio must be >= 1");
    if (kept.empty()) return {};
    auto groups = group_by_class(kept);
    if (groups.size() <= 1) return kept;            // single class: ratio treated as 1
    if (count_ratio(groups) <= max_ratio) return kept;  // already within the cap

    // Shape the surviving counts toward the labeled-set proportions: the
    // scarcest class (relative to its labeled share) pins the scale.
    double scale = 1e300;
    for (const auto& [cls, idx] : groups) {
        if (cls < 0 || static_cast<size_t>(cls) >= labeled_counts.size())
            throw std::runtime_error("cap_imbalance: pseudo-label class outside the labeled class list");
        const double lc = static_cast<double>(labeled_counts[static_cast<size_t>(cls)]);
        if (lc <= 0.0) throw std::runtime_error("cap_imbalance: labeled count is zero for a pseudo class");
        scale = std::min(scale, static_cast<double>(idx.size()) / lc);
    }

    std::map<int, size_t> target;
    size_t t_min = SIZE_MAX;
    for (const auto& [cls, idx] : groups) {
        const double lc = static_cast<double>(labeled_counts[static_cast<size_t>(cls)]);
        size_t t = static_cast<size_t>(std::llround(scale * lc));
        t = std::clamp<size_t>(t, 1, idx.size());
        target[cls] = t;
        t_min = std::min(t_min, t);
    }
    const size_t cap = static_cast<size_t>(std::floor(max_ratio * static_cast<double>(t_min)));
    for (auto& [cls, t] : target) {
        (void)cls;
        t = std::min(t, std::max<size_t>(1, cap));
    }

    auto rng = seeded_rng(derive_seed(seed, 0x434150 /* cap stream */));
    std::vector<size_t> chosen;
    for (auto& [cls, idx] : groups) {
        auto pool = idx;
        shuffle_vec(pool, rng);
        pool.resize(target[cls]);
        chosen.insert(chosen.end(), pool.begin(), pool.end());
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<PseudoLabel> out;
    out.reserve(chosen.size());
    for (size_t i : chosen) out.push_back(kept[i]);
    return out;
}

std::vector<size_t> synthesis_targets(const std::vector<size_t>& current_counts,
                                      const std::vector<size_t>& labeled_counts, double max_ratio) {
    if (current_counts.size() != labeled_counts.size())
        throw std::runtime_error("synthesis_targets: count vector size mismatch");
    std::vector<size_t> target = current_counts;
    size_t head = 0;
    for (size_t c = 1; c < current_counts.size(); ++c)
        if (current_counts[c] > current_counts[head]) head = c;
    const size_t head_n = current_counts[head];
    if (head_n == 0) return target;
    const double head_l = static_cast<double>(std::max<size_t>(1, labeled_counts[head]));
    const size_t ratio_floor = static_cast<size_t>(std::ceil(static_cast<double>(head_n) / max_ratio));
    for (size_t c = 0; c < current_counts.size(); ++c) {
        if (current_counts[c] == 0) continue;  // nothing to interpolate from
        const size_t proportional = static_cast<size_t>(
            std::llround(static_cast<double>(head_n) * static_cast<double>(labeled_counts[c]) / head_l));
        target[c] = std::max({current_counts[c], std::min(proportional, head_n), ratio_floor});
    }
    return target;
}

// ---------------------------------------------------------------------------
// Borderline oversampling
// ---------------------------------------------------------------------------

std::vector<double> interpolate(std::span<const double> a, std::span<const double> b, double gap) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + gap * (b[i] - a[i]);
    return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// Indices of the k nearest rows to `query` among `candidates` (excluding
// `self`), ties broken by row index for determinism.
std::vector<size_t> k_nearest(const Matrix& samples, size_t query, const std::vector<size_t>& candidates,
                              size_t k) {
    std::vector<std::pair<double, size_t>> dist;
    dist.reserve(candidates.size());
    for (size_t c : candidates) {
        if (c == query) continue;
        dist.emplace_back(sq_dist(samples.row(query), samples.row(c)), c);
    }
    const size_t take = std::min(k, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(take), dist.end());
    std::vector<size_t> out;
    out.reserve(take);
    for (size_t i = 0; i < take; ++i) out.push_back(dist[i].second);
    return out;
}

}  // namespace

SmoteResult borderline_smote(const Matrix& samples, const std::vector<int>& classes, const FilterConfig& cfg,
                             const std::vector<size_t>& target_counts, uint64_t seed) {
    if (classes.size() != samples.rows) throw std::runtime_error("borderline_smote: class vector size mismatch");
    SmoteResult result;
    if (samples.rows == 0) return result;

    std::map<int, std::vector<size_t>> by_class;
    std::vector<size_t> all_rows(samples.rows);
    for (size_t i = 0; i < samples.rows; ++i) {
        all_rows[i] = i;
        by_class[classes[i]].push_back(i);
    }

    auto rng = seeded_rng(derive_seed(seed, 0x534d4f54 /* smote stream */));

    for (const auto& [cls, members] : by_class) {
        if (cls < 0 || static_cast<size_t>(cls) >= target_counts.size())
            throw std::runtime_error("borderline_smote: class outside target vector");
        const size_t want = target_counts[static_cast<size_t>(cls)];
        if (want <= members.size()) continue;
        const size_t to_generate = want - members.size();
        if (members.size() < 2) {
            result.warnings.push_back("class " + std::to_string(cls) +
                                      " has fewer than 2 samples; oversampling skipped");
            continue;
        }

        // Danger detection over the full sample set.
        std::vector<size_t> danger;
        for (size_t p : members) {
            auto neigh = k_nearest(samples, p, all_rows, cfg.smote_m);
            size_t other = 0;
            for (size_t q : neigh)
                if (classes[q] != cls) ++other;
            const size_t m_eff = neigh.size();
            if (m_eff == 0) continue;
            const bool noise = other == m_eff;
            const bool in_danger = !noise && 2 * other >= m_eff;  // m/2 <= m' < m
            if (in_danger) danger.push_back(p);
        }
        if (danger.empty()) {
            result.warnings.push_back("class " + std::to_string(cls) +
                                      " has no borderline samples; oversampling skipped");
            continue;
        }

        for (size_t g = 0; g < to_generate; ++g) {
            const size_t p = danger[bounded(rng, danger.size())];
            auto same = k_nearest(samples, p, members, cfg.smote_k);
            if (same.empty()) break;
            const size_t q = same[bounded(rng, same.size())];
            const double gap = uniform01(rng);
            SyntheticSample s;
            s.features = interpolate(samples.row(p), samples.row(q), gap);
            s.cls = cls;
            s.parents = {p, q};
            s.gap = gap;
            result.samples.push_back(std::move(s));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Round assembly
// ---------------------------------------------------------------------------

Dataset assemble_round_dataset(const Dataset& labeled, const Dataset& unlabeled,
                               const std::vector<PseudoLabel>& pseudo,
                               const std::vector<SyntheticSample>& synthetic) {
    const size_t m = labeled.num_classes();
    const size_t d = labeled.dim();

    std::set<size_t> seen;
    size_t pseudo_rows = 0;
    for (const auto& pl : pseudo) {
        if (!pl.kept) continue;
        if (!seen.insert(pl.sample_index).second)
            throw std::runtime_error("assemble_round_dataset: duplicate pseudo sample index " +
                                     std::to_string(pl.sample_index));
        if (pl.sample_index >= unlabeled.rows())
            throw std::runtime_error("assemble_round_dataset: pseudo sample index out of range");
        if (pl.predicted_class < 0 || static_cast<size_t>(pl.predicted_class) >= m)
            throw std::runtime_error("assemble_round_dataset: pseudo class absent from labeled class list");
        ++pseudo_rows;
    }
    for (const auto& s : synthetic) {
        if (s.cls < 0 || static_cast<size_t>(s.cls) >= m)
            throw std::runtime_error("assemble_round_dataset: synthetic class absent from labeled class list");
        if (s.features.size() != d)
            throw std::runtime_error("assemble_round_dataset: synthetic feature width mismatch");
    }

    Dataset out;
    out.class_names = labeled.class_names;
    out.features = Matrix(labeled.rows() + pseudo_rows + synthetic.size(), d);
    out.labels.reserve(out.features.rows);
    out.provenance.reserve(out.features.rows);
    std::vector<int> hidden;
    hidden.reserve(out.features.rows);

    size_t row = 0;
    for (size_t i = 0; i < labeled.rows(); ++i, ++row) {
        auto src = labeled.features.row(i);
        std::copy(src.begin(), src.end(), out.features.row(row).begin());
        out.labels.push_back(labeled.labels[i]);
        out.provenance.push_back(Provenance::Original);
        hidden.push_back(labeled.hidden_label(i));
    }
    for (const auto& pl : pseudo) {
        if (!pl.kept) continue;
        auto src = unlabeled.features.row(pl.sample_index);
        std::copy(src.begin(), src.end(), out.features.row(row).begin());
        out.labels.push_back(pl.predicted_class);
        out.provenance.push_back(Provenance::Pseudo);
        hidden.push_back(unlabeled.hidden_label(pl.sample_index));
        ++row;
    }
    for (const auto& s : synthetic) {
        std::copy(s.features.begin(), s.features.end(), out.features.row(row).begin());
        out.labels.push_back(s.cls);
        out.provenance.push_back(Provenance::Synthetic);
        hidden.push_back(s.cls);
        ++row;
    }
    out.set_hidden_labels(std::move(hidden));
    out.recompute_class_counts();
    return out;
}

}  // namespace stids
