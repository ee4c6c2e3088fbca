#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stids/matrix.hpp"
#include "stids/model.hpp"
#include "stids/rng.hpp"

namespace testutil {

// Relative error with a floor so near-zero gradients are compared on an
// absolute scale the finite differences can actually resolve: central
// differences at h = 1e-5 carry ~1e-10 of roundoff, so magnitudes below
// 1e-5 are only checked to that absolute level.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

// Central finite difference of a scalar function at x, one coordinate.
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// Checks every coordinate of `values` against finite differences of `f`.
// Returns the max relative error.
inline double max_grad_err(const std::function<double()>& f, std::vector<double>& values,
                           const std::vector<double>& analytic, double h = 1e-5) {
    double worst = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        const double fd = central_diff(f, values[i], h);
        worst = std::max(worst, rel_err(analytic[i], fd));
    }
    return worst;
}

// A model small enough for exhaustive parameter-space finite differences.
inline stids::ModelConfig tiny_model(size_t input_dim = 6, size_t num_classes = 3, uint64_t seed = 7) {
    stids::ModelConfig cfg;
    cfg.input_dim = input_dim;
    cfg.expand_dim = 8;
    cfg.channels = 2;
    cfg.length = 4;
    cfg.conv_channels = {3, 3, 3, 3, 4};
    cfg.kernel_size = 3;
    cfg.dropout_rate = 0.0;
    cfg.repr_dim = 4;
    cfg.proj_dim = 3;
    cfg.num_classes = num_classes;
    cfg.seed = seed;
    return cfg;
}

inline stids::Matrix random_batch(size_t rows, size_t cols, uint64_t seed) {
    stids::Matrix m(rows, cols);
    auto rng = stids::seeded_rng(seed);
    for (double& v : m.data) v = stids::uniform_range(rng, -1.0, 1.0);
    return m;
}

inline stids::Matrix random_unit_rows(size_t rows, size_t cols, uint64_t seed) {
    stids::Matrix m = random_batch(rows, cols, seed);
    for (size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (double v : m.row(r)) sq += v * v;
        const double norm = std::sqrt(sq);
        for (double& v : m.row(r)) v /= norm;
    }
    return m;
}

}  // namespace testutil
