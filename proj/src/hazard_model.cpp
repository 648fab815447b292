#include "laco/hazard_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "laco/error.hpp"

namespace laco {

ModelConfig hazard_model_config(std::size_t num_layers, std::size_t max_context) {
    ModelConfig c;
    c.num_layers = num_layers;
    c.num_heads = 4;
    c.model_dim = 32;
    c.vocab_size = vocab::kSize;
    c.max_context = max_context;
    c.ffn_dim = 8;
    c.pos_dims = 8;
    c.seed = 0;
    return c;
}

Model make_hazard_model(const ModelConfig& config) {
    namespace hd = hazard_dims;
    namespace hg = hazard_gains;
    config.validate();
    if (config.head_dim() < vocab::kLanes)
        throw ConfigError("hazard model needs head_dim >= 4, got " + std::to_string(config.head_dim()));
    if (config.model_dim < config.position_width() + hd::kUsed)
        throw ConfigError("hazard model needs 17 dimensions free of the position code");
    if (config.vocab_size < vocab::kSize)
        throw ConfigError("hazard model vocabulary cannot host the reserved tokens");
    if (config.ffn_width() < vocab::kLanes) throw ConfigError("hazard model needs ffn_dim >= 4");

    const std::size_t d = config.model_dim;
    const std::size_t V = config.vocab_size;
    Model m;
    m.config = config;
    m.w_in = Matrix(V, d);
    m.w_out = Matrix(d, V);
    m.pos_table = sinusoidal_table(config.max_context, d, config.position_width());

    // Observation tokens all carry the bias line.
    for (TokenId t = 0; t < vocab::kAccel; ++t) m.w_in(t, hd::kBias) = 1.0f;
    for (std::size_t k = 0; k < vocab::kLanes; ++k) {
        m.w_in(vocab::hazard(k), hd::kHazardFlag) = 1.0f;
        m.w_in(vocab::hazard(k), hd::kHazardLane + k) = 1.0f;
    }
    for (std::uint32_t mask = 0; mask < (1u << vocab::kLanes); ++mask) {
        for (bool stopped : {false, true}) {
            const TokenId t = vocab::marker(mask, stopped);
            for (std::size_t k = 0; k < vocab::kLanes; ++k)
                if (mask & (1u << k)) m.w_in(t, hd::kPathLane + k) = 1.0f;
            if (stopped) m.w_in(t, hd::kStopped) = 1.0f;
        }
    }

    m.w_out(hd::kBias, vocab::kKeep) = hg::kKeepFromBias;
    m.w_out(hd::kStopped, vocab::kAccel) = hg::kAccelFromStopped;
    m.w_out(hd::kBrake, vocab::kBrake) = hg::kBrakeFromPath;
    m.w_out(hd::kConsensus, vocab::kBrake) = hg::kBrakeFromConsensus;

    // Action embeddings. With orthogonal output columns the alignment maps
    // h to  h[bias]*e(KEEP) + (h[stopped]/2)*e(ACCEL)
    //       + ((4*h[brake] + 4*h[consensus]) / 32)*e(BRAKE),
    // so these choices reproduce bias, stopped and (for brake = consensus = 1)
    // brake exactly.
    const float wb = hg::kBrakeFromPath;
    const float wc = hg::kBrakeFromConsensus;
    m.w_in(vocab::kKeep, hd::kBias) = 1.0f;
    m.w_in(vocab::kAccel, hd::kStopped) = hg::kAccelFromStopped;
    m.w_in(vocab::kBrake, hd::kBrake) = (wb * wb + wc * wc) / (wb + wc);

    const std::size_t f = config.ffn_width();
    m.layers.resize(config.num_layers);
    for (auto& lw : m.layers) {
        lw.wq = Matrix(d, d);
        lw.wk = Matrix(d, d);
        lw.wv = Matrix(d, d);
        lw.wo = Matrix(d, d);
        lw.w1 = Matrix(d, f);
        lw.w2 = Matrix(f, d);
    }

    // beta^2 / sqrt(d_h) = score gap
    const float beta = static_cast<float>(std::sqrt(hg::kScoreGap * std::sqrt(static_cast<double>(config.head_dim()))));

    auto& copy = m.layers.front();
    copy.wq(hd::kBias, 0) = beta;
    copy.wk(hd::kHazardFlag, 0) = beta;
    for (std::size_t k = 0; k < vocab::kLanes; ++k) {
        copy.wv(hd::kHazardLane + k, k) = 1.0f;
        copy.wo(k, hd::kCopiedLane + k) = 1.0f;
        copy.w1(hd::kCopiedLane + k, k) = 1.0f;
        copy.w1(hd::kPathLane + k, k) = 1.0f;
        copy.w1(hd::kBias, k) = -1.0f;
        copy.w2(k, hd::kBrake) = 1.0f;
    }

    auto& decide = m.layers.back();
    decide.wq(hd::kBias, 0) = beta;
    decide.wk(hd::kBrake, 0) = beta;
    decide.wv(hd::kBrake, 0) = 1.0f;
    decide.wo(0, hd::kConsensus) = 1.0f;
    return m;
}

TokenId argmax_action(std::span<const float> logits) {
    if (logits.empty()) throw Error("argmax_action: empty logits");
    const auto best = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (!vocab::is_action(best))
        throw Error("argmax token " + std::to_string(best) + " is not an action slot");
    return best;
}

}  // namespace laco
