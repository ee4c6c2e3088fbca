#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace stids {

// Dense row-major matrix of doubles. The whole pipeline runs in 64-bit
// precision so analytic gradients can be checked against central
// finite differences at tight tolerances.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }

    std::span<double> row(size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(size_t r) const { return {data.data() + r * cols, cols}; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    Matrix select_rows(const std::vector<size_t>& idx) const {
        Matrix out(idx.size(), cols);
        for (size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= rows) throw std::out_of_range("Matrix::select_rows: row index out of range");
            auto src = row(idx[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    }
};

}  // namespace stids
