#pragma once

#include <cstdint>

#include "stids/data.hpp"

namespace stids {

// Built-in long-tailed Gaussian-mixture dataset: class centers sit on scaled
// simplex vertices, class sizes decay geometrically from head to tail, and
// `overlap` scales the within-class noise relative to the center spacing.
// Used by the benchmark suites so nothing has to be downloaded.
struct SyntheticConfig {
    size_t classes = 8;
    size_t samples = 10000;
    double imbalance_ratio = 50.0;  // head count / tail count
    double overlap = 0.4;           // noise sigma as a fraction of center distance
    size_t dim = 0;                 // 0 = one dimension per class
    uint64_t seed = 1;
};

Dataset make_synthetic(const SyntheticConfig& cfg);

}  // namespace stids
