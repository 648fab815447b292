#include "laco/ild.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "laco/error.hpp"

namespace laco {

Matrix pseudo_inverse(const Matrix& a, double rel_tol) {
    Eigen::MatrixXd m(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) {
            const double v = a(i, j);
            if (!std::isfinite(v)) throw NumericalError("pseudo_inverse: non-finite entry");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericalError("pseudo_inverse: SVD did not converge");

    const Eigen::VectorXd& s = svd.singularValues();
    const double cutoff = s.size() > 0 ? rel_tol * s(0) : 0.0;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) inv(i) = 1.0 / s(i);
    const Eigen::MatrixXd p = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();

    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j)
            out(i, j) = static_cast<float>(p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    return out;
}

const AlignmentProjection& compute_alignment(const Model& model, double rel_tol) {
    if (model.alignment_memo) return *model.alignment_memo;
    auto proj = std::make_shared<AlignmentProjection>();
    proj->tolerance = rel_tol;
    proj->w_a = matmul(pseudo_inverse(transpose(model.w_out), rel_tol), model.w_in);
    for (float v : proj->w_a.data)
        if (!std::isfinite(v)) throw NumericalError("alignment projection has non-finite entries");
    model.alignment_memo = std::move(proj);
    return *model.alignment_memo;
}

DeliberationResult deliberate(const Model& model, const AlignmentProjection& alignment, std::span<const float> h0,
                              KVCache& cache, std::size_t steps) {
    if (cache.empty()) throw ConfigError("deliberate: cache holds no prefill");
    if (cache.size() + steps > model.config.max_context)
        throw ContextOverflow("deliberate: " + std::to_string(steps) + " latent steps overflow the context");

    DeliberationResult out;
    out.first_latent = cache.size();
    out.steps = steps;
    out.trace = AttentionTrace(model.config.num_layers, model.config.num_heads);
    out.final_hidden.assign(h0.begin(), h0.end());
    for (std::size_t t = 0; t < steps; ++t) {
        const Vector e = row_times(out.final_hidden, alignment.w_a);
        DecodeResult r = decode_step(model, e, cache, Origin::EgoLatent);
        out.trace.push(r.attention.to_step());
        out.final_hidden = std::move(r.hidden);
    }
    return out;
}

}  // namespace laco
