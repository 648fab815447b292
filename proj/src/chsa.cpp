#include "laco/chsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "laco/error.hpp"

namespace laco {

std::size_t retained_count(double retention, std::size_t prefill_len) {
    if (!(retention > 0.0 && retention <= 1.0)) throw ConfigError("retention ratio must lie in (0, 1]");
    const double raw = retention * static_cast<double>(prefill_len);
    const double nearest = std::round(raw);
    const double k = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
    return std::min(prefill_len, static_cast<std::size_t>(k));
}

SaliencyVector saliency_scores(const AttentionTrace& latent_trace, std::size_t prefill_len, double retention) {
    if (latent_trace.empty()) throw Error("saliency requires at least one latent deliberation step");
    if (prefill_len == 0) throw ConfigError("saliency: prefill length must be positive");

    SaliencyVector out;
    out.retention = retention;
    out.keep = retained_count(retention, prefill_len);
    out.scores.assign(prefill_len, 0.0);
    const std::size_t L = latent_trace.num_layers();
    const std::size_t H = latent_trace.num_heads();
    for (std::size_t t = 0; t < latent_trace.num_steps(); ++t) {
        if (latent_trace.context(t) < prefill_len) throw ShapeMismatch("saliency: step context shorter than prefill");
        for (std::size_t j = 0; j < prefill_len; ++j) {
            double best = 0.0;
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t h = 0; h < H; ++h) best = std::max(best, latent_trace.at(t, l, h, j));
            out.scores[j] += best;
        }
    }
    for (double& s : out.scores) s /= static_cast<double>(latent_trace.num_steps());
    return out;
}

std::vector<std::size_t> select_topk(const SaliencyVector& s) {
    if (s.keep > s.scores.size()) throw ConfigError("select_topk: K exceeds T");
    std::vector<std::size_t> order(s.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
    order.resize(s.keep);
    std::sort(order.begin(), order.end());
    return order;
}

ChsaCache build_chsa_cache(const KVCache& prefill, const KVCache& latent, const std::vector<std::size_t>& indices) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= prefill.size()) throw ShapeMismatch("build_chsa_cache: index out of range");
        if (i > 0 && indices[i] <= indices[i - 1])
            throw ShapeMismatch("build_chsa_cache: indices must be strictly increasing");
    }
    ChsaCache out;
    out.kv = prefill.gather(indices);
    out.kv.extend(latent);
    out.selected = indices;
    out.salient_count = indices.size();
    out.latent_count = latent.size();
    return out;
}

}  // namespace laco
