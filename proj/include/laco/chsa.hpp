#pragma once

#include <cstddef>
#include <vector>

#include "laco/model.hpp"

namespace laco {

inline constexpr double kDefaultRetention = 0.3;

struct SaliencyVector {
    std::vector<double> scores;  // one per prefill position, each in [0, 1]
    double retention = kDefaultRetention;
    std::size_t keep = 0;        // ceil(retention * T)
};

// K = ceil(rho * T); products within 1e-9 of an integer round to it, so
// 0.3 * 100 keeps 30 tokens.
std::size_t retained_count(double retention, std::size_t prefill_len);

// S_j = mean over latent steps of the max over (layer, head) of the weight
// on prefill position j. Throws Error when the trace is empty: saliency
// needs at least one latent step.
SaliencyVector saliency_scores(const AttentionTrace& latent_trace, std::size_t prefill_len,
                               double retention = kDefaultRetention);

// The `keep` best positions (ties to the lower index), returned ascending.
std::vector<std::size_t> select_topk(const SaliencyVector& s);

struct ChsaCache {
    KVCache kv;                            // [salient || latent]
    std::vector<std::size_t> selected;     // source prefill indices, strictly increasing
    std::size_t salient_count = 0;
    std::size_t latent_count = 0;
};

ChsaCache build_chsa_cache(const KVCache& prefill, const KVCache& latent, const std::vector<std::size_t>& indices);

}  // namespace laco
