#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's forward pass: positions are recomputed from scratch, layer by
// layer, with no cache.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "laco/model.hpp"

namespace oracle {

using laco::Matrix;
using laco::Model;
using Vec = std::vector<float>;

// x (1 x n) times m (n x k), double accumulation, rounded to float.
inline Vec matvec(const std::vector<float>& x, const Matrix& m) {
    Vec out(m.cols);
    for (std::size_t c = 0; c < m.cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r) s += static_cast<double>(x[r]) * m(r, c);
        out[c] = static_cast<float>(s);
    }
    return out;
}

inline std::vector<std::vector<double>> matmul(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b) {
    const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
    std::vector<std::vector<double>> out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t t = 0; t < k; ++t) out[i][j] += a[i][t] * b[t][j];
    return out;
}

// Hidden state of every position for the given sequence of input vectors,
// positions 0..n-1, causal attention.
inline std::vector<Vec> forward_all(const Model& model, const std::vector<Vec>& inputs) {
    const auto& cfg = model.config;
    const std::size_t d = cfg.model_dim, H = cfg.num_heads, dh = cfg.head_dim(), n = inputs.size();
    std::vector<Vec> x = inputs;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const auto& lw = model.layers[l];
        std::vector<Vec> q(n), k(n), v(n);
        for (std::size_t p = 0; p < n; ++p) {
            Vec xq(d);
            for (std::size_t i = 0; i < d; ++i) xq[i] = x[p][i] + model.pos_table(p, i);
            q[p] = matvec(xq, lw.wq);
            k[p] = matvec(xq, lw.wk);
            v[p] = matvec(x[p], lw.wv);
        }
        std::vector<Vec> next(n);
        for (std::size_t p = 0; p < n; ++p) {
            Vec heads(d);
            for (std::size_t h = 0; h < H; ++h) {
                std::vector<double> s(p + 1);
                for (std::size_t j = 0; j <= p; ++j) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < dh; ++i) dot += static_cast<double>(q[p][h * dh + i]) * k[j][h * dh + i];
                    s[j] = dot / std::sqrt(static_cast<double>(dh));
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double z = 0.0;
                for (double& e : s) z += (e = std::exp(e - mx));
                for (std::size_t i = 0; i < dh; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j <= p; ++j) acc += s[j] / z * v[j][h * dh + i];
                    heads[h * dh + i] = static_cast<float>(acc);
                }
            }
            Vec y = x[p];
            const Vec a = matvec(heads, lw.wo);
            for (std::size_t i = 0; i < d; ++i) y[i] += a[i];
            Vec hid = matvec(y, lw.w1);
            for (float& t : hid) t = t > 0.0f ? t : 0.0f;
            const Vec mlp = matvec(hid, lw.w2);
            for (std::size_t i = 0; i < d; ++i) y[i] += mlp[i];
            next[p] = y;
        }
        x = std::move(next);
    }
    return x;
}

inline Vec embed(const Model& m, laco::TokenId t) {
    return Vec(m.w_in.row(t).begin(), m.w_in.row(t).end());
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return a.size() == b.size() ? m : INFINITY;
}

inline laco::ModelConfig small_config(std::mt19937_64& rng, std::size_t max_layers = 3) {
    laco::ModelConfig c;
    c.num_layers = 2 + rng() % (max_layers - 1);
    c.num_heads = 1 + rng() % 3;
    c.model_dim = c.num_heads * (2 + rng() % 3);
    c.vocab_size = 5 + rng() % 12;
    c.max_context = 64;
    c.seed = rng();
    return c;
}

inline std::vector<laco::TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
    std::vector<laco::TokenId> t(n);
    for (auto& x : t) x = static_cast<laco::TokenId>(rng() % vocab);
    return t;
}

}  // namespace oracle
