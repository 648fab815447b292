#include "laco/tensor.hpp"

#include "laco/error.hpp"

namespace laco {

Vector row_times(std::span<const float> x, const Matrix& m) {
    if (x.size() != m.rows) {
        throw ShapeMismatch("row_times: vector length does not match matrix rows");
    }
    std::vector<double> acc(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const float* r = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) acc[j] += xi * static_cast<double>(r[j]);
    }
    return Vector(acc.begin(), acc.end());
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeMismatch("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        Vector r = row_times(a.row(i), b);
        std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace laco
