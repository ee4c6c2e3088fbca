#include "stids/synthetic.hpp"

#include <cmath>
#include <string>

#include "stids/errors.hpp"
#include "stids/rng.hpp"

namespace stids {

Dataset make_synthetic(const SyntheticConfig& cfg) {
    if (cfg.classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    if (cfg.samples < cfg.classes) throw ConfigError("synthetic: need at least one sample per class");
    if (cfg.imbalance_ratio < 1.0) throw ConfigError("synthetic: imbalance_ratio must be >= 1");

    const size_t m = cfg.classes;
    const size_t dim = cfg.dim == 0 ? m : cfg.dim;
    if (dim < m) throw ConfigError("synthetic: dim must be >= classes");

    // Geometric decay head -> tail with the requested head/tail ratio.
    std::vector<double> share(m);
    double total = 0.0;
    for (size_t c = 0; c < m; ++c) {
        share[c] = std::pow(cfg.imbalance_ratio, -static_cast<double>(c) / static_cast<double>(m - 1));
        total += share[c];
    }
    std::vector<size_t> counts(m);
    size_t assigned = 0;
    for (size_t c = 0; c < m; ++c) {
        counts[c] = std::max<size_t>(1, static_cast<size_t>(std::floor(share[c] / total * static_cast<double>(cfg.samples))));
        assigned += counts[c];
    }
    // Hand out the rounding remainder to the head.
    while (assigned < cfg.samples) {
        ++counts[0];
        ++assigned;
    }
    while (assigned > cfg.samples) {
        for (size_t c = 0; c < m && assigned > cfg.samples; ++c) {
            if (counts[c] > 1) {
                --counts[c];
                --assigned;
            }
        }
    }

    // Class centers: scaled standard-basis vectors (simplex vertices).
    // Pairwise center distance is scale * sqrt(2); noise sigma is relative
    // to that distance.
    const double scale = 1.0;
    const double sigma = cfg.overlap * scale * std::sqrt(2.0);

    Dataset ds;
    ds.class_names.reserve(m);
    for (size_t c = 0; c < m; ++c) ds.class_names.push_back("class_" + std::to_string(c));
    ds.features = Matrix(cfg.samples, dim);
    ds.labels.reserve(cfg.samples);
    ds.provenance.assign(cfg.samples, Provenance::Original);

    auto rng = seeded_rng(derive_seed(cfg.seed, 0x53594e /* synth stream */));
    size_t row = 0;
    for (size_t c = 0; c < m; ++c) {
        for (size_t i = 0; i < counts[c]; ++i, ++row) {
            auto r = ds.features.row(row);
            for (size_t j = 0; j < dim; ++j) r[j] = sigma * normal01(rng);
            r[c] += scale;
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    ds.recompute_class_counts();
    return ds;
}

}  // namespace stids
