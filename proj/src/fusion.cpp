#include "laco/fusion.hpp"

#include <algorithm>
#include <string>

#include "laco/error.hpp"

namespace laco {

namespace {

KVCache as_foreign(KVCache kv) {
    kv.retag(Origin::EgoPrefill, Origin::ForeignPrefill);
    kv.retag(Origin::EgoLatent, Origin::ForeignLatent);
    return kv;
}

CollaborativeResult decode_with(const Model& model, std::span<const float> input, KVCache& ego,
                                const std::vector<ForeignSegment>& segments) {
    if (ego.empty()) throw ConfigError("collaborative decode: ego cache is empty");
    CollaborativeResult out;
    const AgentId agent = ego.agent(ego.size() - 1);
    out.hidden = detail::forward_position(model, input, ego, Origin::EgoLatent, agent, segments, &out.attention);
    ++model.counters.decode_steps;
    out.logits = project_to_logits(model, out.hidden);
    return out;
}

}  // namespace

std::size_t FusedContext::layer_context(std::size_t layer) const {
    std::size_t n = ego.size();
    for (const auto& s : foreign)
        if (layer < s.kv.num_layers()) n += s.kv.size();
    return n;
}

std::size_t FusedContext::fused_depth() const {
    std::size_t depth = 0;
    for (const auto& s : foreign) depth = std::max(depth, s.kv.num_layers());
    return depth;
}

void attach(FusedContext& ctx, const Payload& p) {
    if (p.kv.num_heads() != ctx.ego.num_heads() || p.kv.head_dim() != ctx.ego.head_dim())
        throw ShapeMismatch("attach: payload head shape does not match the ego model");
    if (p.l_comm() > ctx.ego.num_layers()) throw ShapeMismatch("attach: payload is deeper than the ego model");
    ForeignStream s{p.sender, p.frame, as_foreign(p.kv)};
    auto it = std::upper_bound(ctx.foreign.begin(), ctx.foreign.end(), s, [](const ForeignStream& a, const ForeignStream& b) {
        return a.sender != b.sender ? a.sender < b.sender : a.frame < b.frame;
    });
    ctx.foreign.insert(it, std::move(s));
}

FusedContext attach_payload(KVCache ego, const Payload& p) {
    FusedContext ctx{std::move(ego), {}};
    attach(ctx, p);
    return ctx;
}

FusedContext attach_payloads(KVCache ego, const std::vector<Payload>& payloads) {
    FusedContext ctx{std::move(ego), {}};
    for (const auto& p : payloads) attach(ctx, p);
    return ctx;
}

CollaborativeResult collaborative_decode(const Model& model, std::span<const float> input, FusedContext& ctx) {
    std::vector<ForeignSegment> segments;
    segments.reserve(ctx.foreign.size());
    for (const auto& s : ctx.foreign) segments.push_back({&s.kv});
    return decode_with(model, input, ctx.ego, segments);
}

DeliberationResult deliberate_fused(const Model& model, const AlignmentProjection& alignment,
                                    std::span<const float> h0, FusedContext& ctx, std::size_t steps) {
    KVCache& ego = ctx.ego;
    if (ego.empty()) throw ConfigError("deliberate_fused: cache holds no prefill");
    if (ego.size() + steps > model.config.max_context)
        throw ContextOverflow("deliberate_fused: " + std::to_string(steps) + " latent steps overflow the context");
    std::vector<ForeignSegment> segments;
    for (const auto& s : ctx.foreign) segments.push_back({&s.kv});

    DeliberationResult out;
    out.first_latent = ego.size();
    out.steps = steps;
    out.trace = AttentionTrace(model.config.num_layers, model.config.num_heads);
    out.final_hidden.assign(h0.begin(), h0.end());
    const AgentId agent = ego.agent(ego.size() - 1);
    for (std::size_t t = 0; t < steps; ++t) {
        const Vector e = row_times(out.final_hidden, alignment.w_a);
        AttentionRows rows;
        out.final_hidden = detail::forward_position(model, e, ego, Origin::EgoLatent, agent, segments, &rows);
        ++model.counters.decode_steps;
        AttentionStep step;
        step.context = ego.size();
        for (const auto& la : rows.layers)
            for (std::size_t h = 0; h < rows.heads; ++h) {
                auto r = rows.row(&la - rows.layers.data(), h);
                step.weights.insert(step.weights.end(), r.begin(), r.begin() + static_cast<std::ptrdiff_t>(step.context));
            }
        out.trace.push(std::move(step));
    }
    return out;
}

CollaborativeResult naive_full_fusion(const Model& model, std::span<const float> input, KVCache& ego,
                                      const KVCache& foreign) {
    if (foreign.num_layers() != ego.num_layers() || foreign.num_heads() != ego.num_heads() ||
        foreign.head_dim() != ego.head_dim())
        throw ShapeMismatch("naive_full_fusion: foreign cache shape differs from ego");
    const KVCache tagged = as_foreign(foreign);
    return decode_with(model, input, ego, {ForeignSegment{&tagged}});
}

}  // namespace laco
