#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "laco/tensor.hpp"

namespace laco {

using TokenId = std::uint32_t;
using AgentId = std::uint32_t;

struct ModelConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 2;
    std::size_t model_dim = 8;
    std::size_t vocab_size = 16;
    std::size_t max_context = 128;
    // MLP hidden width; 0 selects 2 * model_dim.
    std::size_t ffn_dim = 0;
    // Number of trailing residual dimensions that carry the sinusoidal
    // position code; 0 selects all of them.
    std::size_t pos_dims = 0;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return num_heads == 0 ? 0 : model_dim / num_heads; }
    std::size_t ffn_width() const { return ffn_dim == 0 ? 2 * model_dim : ffn_dim; }
    std::size_t position_width() const { return pos_dims == 0 ? model_dim : pos_dims; }

    // Throws ConfigError on any violated invariant.
    void validate() const;
};

struct LayerWeights {
    Matrix wq;  // d x d, head h owns columns [h*d_h, (h+1)*d_h)
    Matrix wk;
    Matrix wv;
    Matrix wo;  // d x d, applied to the concatenated head outputs
    Matrix w1;  // d x ffn
    Matrix w2;  // ffn x d
};

struct AlignmentProjection;

struct ForwardCounters {
    std::uint64_t prefills = 0;
    std::uint64_t decode_steps = 0;
    std::uint64_t positions = 0;  // every forward over one position, prefill included
    std::uint64_t logit_projections = 0;
};

struct Model {
    ModelConfig config;
    Matrix w_in;       // |V| x d
    Matrix w_out;      // d x |V|
    std::vector<LayerWeights> layers;
    Matrix pos_table;  // N_max x d

    // Instrumentation; not part of the model's value.
    mutable ForwardCounters counters;
    // Memoized alignment projection, filled by compute_alignment().
    mutable std::shared_ptr<const AlignmentProjection> alignment_memo;

    std::span<const float> embedding(TokenId t) const;
};

enum class Origin : std::uint8_t { EgoPrefill = 0, EgoLatent = 1, ForeignPrefill = 2, ForeignLatent = 3 };

inline bool is_foreign(Origin o) { return o == Origin::ForeignPrefill || o == Origin::ForeignLatent; }

// Per-layer, per-head key/value store. Every layer holds the same number of
// positions; per-position metadata (origin tag, source agent) is shared by
// all layers. Positions are only ever appended; pruning produces new caches.
class KVCache {
public:
    KVCache() = default;
    KVCache(std::size_t layers, std::size_t heads, std::size_t head_dim);

    static KVCache for_model(const Model& m) {
        return KVCache(m.config.num_layers, m.config.num_heads, m.config.head_dim());
    }

    std::size_t num_layers() const { return keys_.size(); }
    std::size_t num_heads() const { return heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t size() const { return origins_.size(); }
    bool empty() const { return origins_.empty(); }

    Origin origin(std::size_t pos) const { return origins_[pos]; }
    AgentId agent(std::size_t pos) const { return agents_[pos]; }
    const std::vector<Origin>& origins() const { return origins_; }
    const std::vector<AgentId>& agents() const { return agents_; }

    std::span<const float> key(std::size_t layer, std::size_t pos, std::size_t head) const;
    std::span<const float> value(std::size_t layer, std::size_t pos, std::size_t head) const;

    // Whole-layer storage, laid out [position][head][head_dim].
    std::span<const float> layer_keys(std::size_t layer) const { return keys_[layer]; }
    std::span<const float> layer_values(std::size_t layer) const { return values_[layer]; }

    // Opens a zero-filled slot at every layer and returns its index. The
    // forward pass fills layer l's slot before attending at layer l.
    std::size_t open_slot(Origin origin, AgentId agent);
    std::span<float> slot_key(std::size_t layer, std::size_t pos, std::size_t head);
    std::span<float> slot_value(std::size_t layer, std::size_t pos, std::size_t head);

    // Appends one fully specified position (all layers).
    void push_position(Origin origin, AgentId agent, std::span<const float> keys, std::span<const float> values);

    // New cache holding positions [begin, end) in order.
    KVCache slice(std::size_t begin, std::size_t end) const;
    // New cache holding the listed positions in list order.
    KVCache gather(std::span<const std::size_t> positions) const;
    // New cache holding layers [0, n).
    KVCache first_layers(std::size_t n) const;
    // Appends every position of `other` (same shape required).
    void extend(const KVCache& other);
    void retag(Origin from, Origin to);
    void set_agent(AgentId agent);

    bool operator==(const KVCache&) const = default;

private:
    std::size_t heads_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<std::vector<float>> keys_;
    std::vector<std::vector<float>> values_;
    std::vector<Origin> origins_;
    std::vector<AgentId> agents_;
};

// One recorded forward step: softmax rows for every (layer, head) over a
// common context of `context` positions, laid out [layer][head][j].
struct AttentionStep {
    std::size_t context = 0;
    std::vector<double> weights;
};

class AttentionTrace {
public:
    AttentionTrace() = default;
    AttentionTrace(std::size_t layers, std::size_t heads) : layers_(layers), heads_(heads) {}

    std::size_t num_layers() const { return layers_; }
    std::size_t num_heads() const { return heads_; }
    std::size_t num_steps() const { return steps_.size(); }
    bool empty() const { return steps_.empty(); }
    std::size_t context(std::size_t step) const { return steps_[step].context; }

    double at(std::size_t step, std::size_t layer, std::size_t head, std::size_t j) const {
        const auto& s = steps_[step];
        return s.weights[(layer * heads_ + head) * s.context + j];
    }
    std::span<const double> row(std::size_t step, std::size_t layer, std::size_t head) const {
        const auto& s = steps_[step];
        return {s.weights.data() + (layer * heads_ + head) * s.context, s.context};
    }

    void push(AttentionStep step);
    const std::vector<AttentionStep>& steps() const { return steps_; }

private:
    std::size_t layers_ = 0;
    std::size_t heads_ = 0;
    std::vector<AttentionStep> steps_;
};

// Attention of a single query position, per layer. Layers may have
// different context lengths under asymmetric fusion, so each carries its
// own origin tags.
struct LayerAttention {
    std::vector<Origin> origins;
    std::vector<AgentId> agents;
    std::vector<double> weights;  // [head][j]

    std::size_t context() const { return origins.size(); }
};

struct AttentionRows {
    std::size_t heads = 0;
    std::vector<LayerAttention> layers;

    std::span<const double> row(std::size_t layer, std::size_t head) const {
        const auto& la = layers[layer];
        return {la.weights.data() + head * la.context(), la.context()};
    }
    // Requires equal context at every layer.
    AttentionStep to_step() const;

    bool operator==(const AttentionRows& o) const {
        if (heads != o.heads || layers.size() != o.layers.size()) return false;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].origins != o.layers[l].origins || layers[l].agents != o.layers[l].agents ||
                layers[l].weights != o.layers[l].weights)
                return false;
        }
        return true;
    }
};

Model init_model(const ModelConfig& config);

struct PrefillResult {
    Vector hidden;
    KVCache cache;
    AttentionTrace trace;
};

// With record_trace false the returned trace is empty.
PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, AgentId agent = 0, bool record_trace = true);

struct DecodeResult {
    Vector hidden;
    AttentionRows attention;
};

DecodeResult decode_step(const Model& model, std::span<const float> input, KVCache& cache,
                         Origin tag = Origin::EgoLatent);

Vector project_to_logits(const Model& model, std::span<const float> hidden);

// Read-only foreign keys/values visible to layers [0, cache.num_layers()).
struct ForeignSegment {
    const KVCache* cache = nullptr;
};

namespace detail {

// The single forward routine behind prefill, decode and fused decode: one
// new position is appended to `ego`; at each layer l the query attends over
// [ego positions (new one included) || foreign segments holding layer l].
Vector forward_position(const Model& model, std::span<const float> input, KVCache& ego, Origin tag,
                        AgentId agent, std::span<const ForeignSegment> foreign, AttentionRows* rows);

}  // namespace detail

// Sinusoidal table over the trailing `pos_dims` residual dimensions.
Matrix sinusoidal_table(std::size_t max_context, std::size_t model_dim, std::size_t pos_dims);

}  // namespace laco
