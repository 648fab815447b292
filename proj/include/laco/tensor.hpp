#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace laco {

using Vector = std::vector<float>;

// Dense row-major float matrix. Row vectors multiply from the left: y = x * M.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

// y = x * m, accumulated in double.
Vector row_times(std::span<const float> x, const Matrix& m);

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);

}  // namespace laco
