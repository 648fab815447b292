#include "laco/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "laco/error.hpp"
#include "laco/rng.hpp"

namespace laco {

void ModelConfig::validate() const {
    if (num_layers < 2) throw ConfigError("num_layers must be >= 2");
    if (num_heads == 0) throw ConfigError("num_heads must be positive");
    if (model_dim == 0) throw ConfigError("model_dim must be positive");
    if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (max_context == 0) throw ConfigError("max_context must be positive");
    if (pos_dims > model_dim) throw ConfigError("pos_dims exceeds model_dim");
}

std::span<const float> Model::embedding(TokenId t) const {
    if (t >= config.vocab_size) throw ConfigError("token id " + std::to_string(t) + " outside vocabulary");
    return w_in.row(t);
}

// ---------------------------------------------------------------------------
// KVCache

KVCache::KVCache(std::size_t layers, std::size_t heads, std::size_t head_dim)
    : heads_(heads), head_dim_(head_dim), keys_(layers), values_(layers) {}

std::span<const float> KVCache::key(std::size_t layer, std::size_t pos, std::size_t head) const {
    return {keys_[layer].data() + (pos * heads_ + head) * head_dim_, head_dim_};
}

std::span<const float> KVCache::value(std::size_t layer, std::size_t pos, std::size_t head) const {
    return {values_[layer].data() + (pos * heads_ + head) * head_dim_, head_dim_};
}

std::span<float> KVCache::slot_key(std::size_t layer, std::size_t pos, std::size_t head) {
    return {keys_[layer].data() + (pos * heads_ + head) * head_dim_, head_dim_};
}

std::span<float> KVCache::slot_value(std::size_t layer, std::size_t pos, std::size_t head) {
    return {values_[layer].data() + (pos * heads_ + head) * head_dim_, head_dim_};
}

std::size_t KVCache::open_slot(Origin origin, AgentId agent) {
    const std::size_t stride = heads_ * head_dim_;
    for (std::size_t l = 0; l < keys_.size(); ++l) {
        keys_[l].resize(keys_[l].size() + stride, 0.0f);
        values_[l].resize(values_[l].size() + stride, 0.0f);
    }
    origins_.push_back(origin);
    agents_.push_back(agent);
    return origins_.size() - 1;
}

void KVCache::push_position(Origin origin, AgentId agent, std::span<const float> keys,
                            std::span<const float> values) {
    const std::size_t stride = heads_ * head_dim_;
    if (keys.size() != stride * keys_.size() || values.size() != keys.size())
        throw ShapeMismatch("push_position: wrong number of elements");
    for (std::size_t l = 0; l < keys_.size(); ++l) {
        keys_[l].insert(keys_[l].end(), keys.begin() + l * stride, keys.begin() + (l + 1) * stride);
        values_[l].insert(values_[l].end(), values.begin() + l * stride, values.begin() + (l + 1) * stride);
    }
    origins_.push_back(origin);
    agents_.push_back(agent);
}

KVCache KVCache::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw ShapeMismatch("slice out of range");
    KVCache out(num_layers(), heads_, head_dim_);
    const std::size_t stride = heads_ * head_dim_;
    for (std::size_t l = 0; l < keys_.size(); ++l) {
        out.keys_[l].assign(keys_[l].begin() + begin * stride, keys_[l].begin() + end * stride);
        out.values_[l].assign(values_[l].begin() + begin * stride, values_[l].begin() + end * stride);
    }
    out.origins_.assign(origins_.begin() + begin, origins_.begin() + end);
    out.agents_.assign(agents_.begin() + begin, agents_.begin() + end);
    return out;
}

KVCache KVCache::gather(std::span<const std::size_t> positions) const {
    KVCache out(num_layers(), heads_, head_dim_);
    const std::size_t stride = heads_ * head_dim_;
    for (std::size_t p : positions) {
        if (p >= size()) throw ShapeMismatch("gather: position out of range");
        for (std::size_t l = 0; l < keys_.size(); ++l) {
            out.keys_[l].insert(out.keys_[l].end(), keys_[l].begin() + p * stride,
                                keys_[l].begin() + (p + 1) * stride);
            out.values_[l].insert(out.values_[l].end(), values_[l].begin() + p * stride,
                                  values_[l].begin() + (p + 1) * stride);
        }
        out.origins_.push_back(origins_[p]);
        out.agents_.push_back(agents_[p]);
    }
    return out;
}

KVCache KVCache::first_layers(std::size_t n) const {
    if (n > num_layers()) throw ShapeMismatch("first_layers: more layers requested than present");
    KVCache out = *this;
    out.keys_.resize(n);
    out.values_.resize(n);
    return out;
}

void KVCache::extend(const KVCache& other) {
    if (other.num_layers() != num_layers() || other.heads_ != heads_ || other.head_dim_ != head_dim_)
        throw ShapeMismatch("extend: cache shapes differ");
    for (std::size_t l = 0; l < keys_.size(); ++l) {
        keys_[l].insert(keys_[l].end(), other.keys_[l].begin(), other.keys_[l].end());
        values_[l].insert(values_[l].end(), other.values_[l].begin(), other.values_[l].end());
    }
    origins_.insert(origins_.end(), other.origins_.begin(), other.origins_.end());
    agents_.insert(agents_.end(), other.agents_.begin(), other.agents_.end());
}

void KVCache::retag(Origin from, Origin to) {
    std::replace(origins_.begin(), origins_.end(), from, to);
}

void KVCache::set_agent(AgentId agent) { std::fill(agents_.begin(), agents_.end(), agent); }

// ---------------------------------------------------------------------------
// Attention records

void AttentionTrace::push(AttentionStep step) {
    if (step.weights.size() != layers_ * heads_ * step.context)
        throw ShapeMismatch("attention step has wrong size");
    steps_.push_back(std::move(step));
}

AttentionStep AttentionRows::to_step() const {
    AttentionStep s;
    s.context = layers.empty() ? 0 : layers.front().context();
    for (const auto& la : layers) {
        if (la.context() != s.context) throw ShapeMismatch("to_step: layer contexts differ");
        s.weights.insert(s.weights.end(), la.weights.begin(), la.weights.end());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Construction

Matrix sinusoidal_table(std::size_t max_context, std::size_t model_dim, std::size_t pos_dims) {
    Matrix pe(max_context, model_dim);
    const std::size_t first = model_dim - pos_dims;
    for (std::size_t pos = 0; pos < max_context; ++pos) {
        for (std::size_t i = 0; i < pos_dims; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(pos_dims));
            const double angle = static_cast<double>(pos) * freq;
            pe(pos, first + i) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

namespace {

void fill_uniform(Matrix& m, Pcg32& rng, float bound) {
    for (float& x : m.data) x = rng.uniform(-bound, bound);
}

}  // namespace

Model init_model(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.model_dim;
    const std::size_t f = config.ffn_width();
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));

    Model m;
    m.config = config;
    m.w_in = Matrix(config.vocab_size, d);
    m.w_out = Matrix(d, config.vocab_size);
    m.pos_table = sinusoidal_table(config.max_context, d, config.position_width());

    // Stream order: W_in, W_out, then per layer Wq, Wk, Wv, Wo, W1, W2; each row-major.
    Pcg32 rng(config.seed);
    fill_uniform(m.w_in, rng, bound);
    fill_uniform(m.w_out, rng, bound);
    m.layers.resize(config.num_layers);
    for (auto& lw : m.layers) {
        lw.wq = Matrix(d, d);
        lw.wk = Matrix(d, d);
        lw.wv = Matrix(d, d);
        lw.wo = Matrix(d, d);
        lw.w1 = Matrix(d, f);
        lw.w2 = Matrix(f, d);
        fill_uniform(lw.wq, rng, bound);
        fill_uniform(lw.wk, rng, bound);
        fill_uniform(lw.wv, rng, bound);
        fill_uniform(lw.wo, rng, bound);
        fill_uniform(lw.w1, rng, bound);
        fill_uniform(lw.w2, rng, bound);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

Vector forward_position(const Model& model, std::span<const float> input, KVCache& ego, Origin tag,
                        AgentId agent, std::span<const ForeignSegment> foreign, AttentionRows* rows) {
    const ModelConfig& cfg = model.config;
    const std::size_t d = cfg.model_dim;
    const std::size_t H = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    if (input.size() != d) throw ShapeMismatch("forward: input width != model_dim");
    if (ego.num_layers() != cfg.num_layers || ego.num_heads() != H || ego.head_dim() != dh)
        throw ShapeMismatch("forward: cache shape does not match model");
    for (float v : input)
        if (!std::isfinite(v)) throw NumericalError("forward: non-finite input");
    for (const auto& seg : foreign)
        if (seg.cache->num_heads() != H || seg.cache->head_dim() != dh)
            throw ShapeMismatch("forward: foreign cache shape does not match model");

    const std::size_t pos = ego.size();
    if (pos >= cfg.max_context)
        throw ContextOverflow("context overflow: " + std::to_string(pos + 1) + " > " + std::to_string(cfg.max_context));

    ego.open_slot(tag, agent);
    ++model.counters.positions;

    const auto pe = model.pos_table.row(pos);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Vector x(input.begin(), input.end());
    Vector xq(d);
    Vector head_out(d);
    std::vector<double> scores;

    if (rows) {
        rows->heads = H;
        rows->layers.assign(cfg.num_layers, {});
    }

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& lw = model.layers[l];
        for (std::size_t i = 0; i < d; ++i) xq[i] = x[i] + pe[i];
        const Vector q = row_times(xq, lw.wq);
        const Vector k = row_times(xq, lw.wk);
        const Vector v = row_times(x, lw.wv);
        for (std::size_t h = 0; h < H; ++h) {
            std::copy_n(k.begin() + h * dh, dh, ego.slot_key(l, pos, h).begin());
            std::copy_n(v.begin() + h * dh, dh, ego.slot_value(l, pos, h).begin());
        }

        // Context at this layer: ego (new position included), then foreign
        // segments that carry this layer.
        std::size_t context = ego.size();
        for (const auto& seg : foreign)
            if (l < seg.cache->num_layers()) context += seg.cache->size();

        LayerAttention* la = nullptr;
        if (rows) {
            la = &rows->layers[l];
            la->origins = ego.origins();
            la->agents = ego.agents();
            for (const auto& seg : foreign) {
                if (l >= seg.cache->num_layers()) continue;
                la->origins.insert(la->origins.end(), seg.cache->origins().begin(), seg.cache->origins().end());
                la->agents.insert(la->agents.end(), seg.cache->agents().begin(), seg.cache->agents().end());
            }
            la->weights.assign(H * context, 0.0);
        }

        // Contiguous [pos][head][d_h] blocks visible at this layer, ego first.
        struct Block {
            const float* keys;
            const float* values;
            std::size_t n;
        };
        std::vector<Block> blocks{{ego.layer_keys(l).data(), ego.layer_values(l).data(), ego.size()}};
        for (const auto& seg : foreign)
            if (l < seg.cache->num_layers())
                blocks.push_back({seg.cache->layer_keys(l).data(), seg.cache->layer_values(l).data(), seg.cache->size()});
        const std::size_t stride = H * dh;

        scores.resize(context);
        std::vector<double> acc(dh);
        for (std::size_t h = 0; h < H; ++h) {
            const float* qh = q.data() + h * dh;
            std::size_t j = 0;
            for (const Block& b : blocks) {
                const float* key = b.keys + h * dh;
                std::size_t p = 0;
                // four independent dot products at a time; each keeps its own summation order
                for (; p + 4 <= b.n; p += 4, key += 4 * stride) {
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                    for (std::size_t i = 0; i < dh; ++i) {
                        const double qi = qh[i];
                        s0 += qi * key[i];
                        s1 += qi * key[stride + i];
                        s2 += qi * key[2 * stride + i];
                        s3 += qi * key[3 * stride + i];
                    }
                    scores[j++] = s0 * scale;
                    scores[j++] = s1 * scale;
                    scores[j++] = s2 * scale;
                    scores[j++] = s3 * scale;
                }
                for (; p < b.n; ++p, key += stride) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < dh; ++i) s += static_cast<double>(qh[i]) * key[i];
                    scores[j++] = s * scale;
                }
            }

            const double mx = *std::max_element(scores.begin(), scores.end());
            double total = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                total += s;
            }
            for (double& s : scores) s /= total;

            // Four output dims per pass so each running sum stays in a register;
            // positions are still added in context order.
            std::size_t i = 0;
            for (; i + 4 <= dh; i += 4) {
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                j = 0;
                for (const Block& b : blocks) {
                    const float* val = b.values + h * dh + i;
                    for (std::size_t p = 0; p < b.n; ++p, val += stride) {
                        const double w = scores[j++];
                        a0 += w * val[0];
                        a1 += w * val[1];
                        a2 += w * val[2];
                        a3 += w * val[3];
                    }
                }
                acc[i] = a0;
                acc[i + 1] = a1;
                acc[i + 2] = a2;
                acc[i + 3] = a3;
            }
            for (; i < dh; ++i) {
                double a = 0.0;
                j = 0;
                for (const Block& b : blocks) {
                    const float* val = b.values + h * dh + i;
                    for (std::size_t p = 0; p < b.n; ++p, val += stride) a += scores[j++] * static_cast<double>(*val);
                }
                acc[i] = a;
            }
            for (std::size_t i = 0; i < dh; ++i) head_out[h * dh + i] = static_cast<float>(acc[i]);
            if (la) std::copy(scores.begin(), scores.end(), la->weights.begin() + h * context);
        }

        const Vector attn = row_times(head_out, lw.wo);
        for (std::size_t i = 0; i < d; ++i) x[i] += attn[i];

        Vector hidden = row_times(x, lw.w1);
        for (float& z : hidden) z = std::max(z, 0.0f);
        const Vector mlp = row_times(hidden, lw.w2);
        for (std::size_t i = 0; i < d; ++i) x[i] += mlp[i];
    }
    return x;
}

}  // namespace detail

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, AgentId agent, bool record_trace) {
    const ModelConfig& cfg = model.config;
    if (tokens.empty()) throw ConfigError("prefill: empty token sequence");
    if (tokens.size() > cfg.max_context)
        throw ContextOverflow("prefill: " + std::to_string(tokens.size()) + " tokens exceed max_context");

    PrefillResult out{{}, KVCache::for_model(model), AttentionTrace(cfg.num_layers, cfg.num_heads)};
    AttentionRows rows;
    for (TokenId t : tokens) {
        out.hidden = detail::forward_position(model, model.embedding(t), out.cache, Origin::EgoPrefill, agent, {},
                                              record_trace ? &rows : nullptr);
        if (record_trace) out.trace.push(rows.to_step());
    }
    ++model.counters.prefills;
    return out;
}

DecodeResult decode_step(const Model& model, std::span<const float> input, KVCache& cache, Origin tag) {
    if (cache.empty()) throw ConfigError("decode_step: cache is empty");
    DecodeResult out;
    const AgentId agent = cache.agent(cache.size() - 1);
    out.hidden = detail::forward_position(model, input, cache, tag, agent, {}, &out.attention);
    ++model.counters.decode_steps;
    return out;
}

Vector project_to_logits(const Model& model, std::span<const float> hidden) {
    ++model.counters.logit_projections;
    return row_times(hidden, model.w_out);
}

}  // namespace laco
