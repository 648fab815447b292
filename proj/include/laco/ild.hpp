#pragma once

#include <cstddef>

#include "laco/model.hpp"

namespace laco {

inline constexpr double kDefaultPinvTolerance = 1e-6;
inline constexpr std::size_t kDefaultDeliberationSteps = 10;

// Moore-Penrose pseudo-inverse via SVD; singular values below
// rel_tol * sigma_max are treated as zero. Throws NumericalError if the SVD
// does not converge or the input is not finite.
Matrix pseudo_inverse(const Matrix& a, double rel_tol = kDefaultPinvTolerance);

struct AlignmentProjection {
    Matrix w_a;  // d x d
    double tolerance = kDefaultPinvTolerance;
};

// Least-squares map from hidden states back into input-embedding space:
// W_a = pinv(W_out^T) * W_in, i.e. the d x d matrix that best sends each
// token's output-head direction to that token's embedding. Computed once per
// model and memoized; later calls return the same object.
const AlignmentProjection& compute_alignment(const Model& model, double rel_tol = kDefaultPinvTolerance);

struct DeliberationResult {
    std::size_t first_latent = 0;  // cache index of the first EgoLatent position
    std::size_t steps = 0;
    Vector final_hidden;
    AttentionTrace trace;          // one step per latent pass

    KVCache latent_segment(const KVCache& cache) const { return cache.slice(first_latent, first_latent + steps); }
};

// Runs `steps` latent forward passes: the next input is the previous hidden
// state times W_a. Appends exactly `steps` EgoLatent positions to `cache`
// and never projects to the vocabulary.
DeliberationResult deliberate(const Model& model, const AlignmentProjection& alignment, std::span<const float> h0,
                              KVCache& cache, std::size_t steps);

}  // namespace laco
