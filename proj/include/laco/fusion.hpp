#pragma once

#include <cstddef>
#include <vector>

#include "laco/ild.hpp"
#include "laco/model.hpp"
#include "laco/payload.hpp"

namespace laco {

struct ForeignStream {
    AgentId sender = 0;
    std::uint64_t frame = 0;
    KVCache kv;  // first L_comm layers, tagged ForeignPrefill / ForeignLatent
};

// Ego cache plus read-only received streams. Layer l of the decoding
// context is [ego || streams holding layer l], streams in ascending sender id.
struct FusedContext {
    KVCache ego;
    std::vector<ForeignStream> foreign;

    std::size_t layer_context(std::size_t layer) const;
    // Deepest layer any stream reaches (0 when nothing is attached).
    std::size_t fused_depth() const;
};

// Adds one received payload. Throws ShapeMismatch when its head shape
// differs from the ego cache or it carries more layers than the model.
void attach(FusedContext& ctx, const Payload& p);

FusedContext attach_payload(KVCache ego, const Payload& p);
FusedContext attach_payloads(KVCache ego, const std::vector<Payload>& payloads);

struct CollaborativeResult {
    Vector hidden;
    Vector logits;
    AttentionRows attention;
};

// One decision decode over the fused context. The new position is appended
// to ctx.ego only; received streams are never modified.
CollaborativeResult collaborative_decode(const Model& model, std::span<const float> input, FusedContext& ctx);

// Latent deliberation over the fused context: like deliberate(), but every
// pass also attends to the attached streams. Trace rows keep only the ego
// columns (ego positions come first at every layer), so saliency over the
// prefill is still well defined.
DeliberationResult deliberate_fused(const Model& model, const AlignmentProjection& alignment,
                                    std::span<const float> h0, FusedContext& ctx, std::size_t steps);

// Baseline: every layer attends over [ego || foreign]. `foreign` must hold
// all model layers; its ego tags are read as foreign.
CollaborativeResult naive_full_fusion(const Model& model, std::span<const float> input, KVCache& ego,
                                      const KVCache& foreign);

}  // namespace laco
