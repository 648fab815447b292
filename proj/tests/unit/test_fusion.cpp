#include <doctest.h>

#include <random>

#include "laco/error.hpp"
#include "laco/fusion.hpp"
#include "laco/hazard_model.hpp"
#include "laco/telemetry.hpp"
#include "oracle.hpp"

using namespace laco;

namespace {

struct Agent {
    std::vector<TokenId> tokens;
    PrefillResult pre;
    DeliberationResult delib;
};

// 20 CLEAR cells, optionally one HAZARD, then the marker.
Agent think(const Model& m, AgentId id, int hazard_lane, std::uint32_t path_mask, std::size_t steps = 10) {
    Agent a;
    a.tokens.assign(20, vocab::kClear);
    if (hazard_lane >= 0) a.tokens[7] = vocab::hazard(static_cast<std::size_t>(hazard_lane));
    a.tokens.push_back(vocab::marker(path_mask, false));
    a.pre = prefill(m, a.tokens, id);
    a.delib = deliberate(m, compute_alignment(m), a.pre.hidden, a.pre.cache, steps);
    return a;
}

Payload laco_payload(const Agent& a, AgentId id, double l_comm, double rho = 0.3) {
    const std::size_t T = a.tokens.size();
    const auto s = saliency_scores(a.delib.trace, T, rho);
    const auto chsa = build_chsa_cache(a.pre.cache.slice(0, T), a.delib.latent_segment(a.pre.cache), select_topk(s));
    return distill(chsa, l_comm, id, 0);
}

}  // namespace

TEST_CASE("no payloads: collaborative decode is bit-identical to decode_step") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 50; ++t) {
        const Model m = init_model(oracle::small_config(rng));
        auto p = prefill(m, oracle::random_tokens(rng, 1 + rng() % 8, m.config.vocab_size));
        std::vector<float> x(m.config.model_dim);
        std::normal_distribution<float> g;
        for (float& v : x) v = g(rng);

        KVCache plain = p.cache;
        const auto d = decode_step(m, x, plain);
        FusedContext ctx{p.cache, {}};
        const auto c = collaborative_decode(m, x, ctx);
        CHECK(c.hidden == d.hidden);
        CHECK(c.logits == project_to_logits(m, d.hidden));
        CHECK(c.attention == d.attention);
        CHECK(ctx.ego == plain);
    }
}

TEST_CASE("layer contexts under asymmetric fusion") {
    KVCache ego(6, 2, 3);
    std::vector<float> z(6 * 6, 0.0f);
    for (int i = 0; i < 4; ++i) ego.push_position(Origin::EgoPrefill, 0, z, z);
    Payload p;
    p.sender = 1;
    p.salient_count = 3;
    p.latent_count = 2;
    p.source_indices = {0, 1, 2};
    p.kv = KVCache(2, 2, 3);
    std::vector<float> z2(2 * 6, 0.0f);
    for (int i = 0; i < 5; ++i) p.kv.push_position(i < 3 ? Origin::EgoPrefill : Origin::EgoLatent, 1, z2, z2);

    const FusedContext ctx = attach_payload(ego, p);
    CHECK(ctx.layer_context(0) == 9);
    CHECK(ctx.layer_context(1) == 9);
    for (std::size_t l = 2; l < 6; ++l) CHECK(ctx.layer_context(l) == 4);
    CHECK(ctx.fused_depth() == 2);
    CHECK(ctx.foreign[0].kv.origin(0) == Origin::ForeignPrefill);
    CHECK(ctx.foreign[0].kv.origin(4) == Origin::ForeignLatent);

    Payload q = p;
    q.sender = 3;
    Payload r = p;
    r.sender = 1;
    r.frame = 5;
    const FusedContext two = attach_payloads(ego, {q, r, p});
    REQUIRE(two.foreign.size() == 3);
    CHECK(two.foreign[0].sender == 1);
    CHECK(two.foreign[0].frame == 0);
    CHECK(two.foreign[1].frame == 5);
    CHECK(two.foreign[2].sender == 3);

    Payload deep = p;
    deep.kv = KVCache(7, 2, 3);
    FusedContext bad{ego, {}};
    CHECK_THROWS_AS(attach(bad, deep), ShapeMismatch);
    Payload wide = p;
    wide.kv = KVCache(2, 3, 2);
    CHECK_THROWS_AS(attach(bad, wide), ShapeMismatch);
}

TEST_CASE("a shallow hazard payload on the ego path makes the ego brake") {
    const Model m = make_hazard_model(hazard_model_config(4));
    const Agent ego = think(m, 0, -1, 0b0001, 0);
    const Agent other = think(m, 1, 0, 0b0100);
    const auto mark = m.embedding(ego.tokens.back());

    FusedContext alone{ego.pre.cache, {}};
    const auto a = collaborative_decode(m, mark, alone);
    CHECK(argmax_action(a.logits) == vocab::kKeep);

    FusedContext ctx = attach_payload(ego.pre.cache, laco_payload(other, 1, 0.25));
    CHECK(ctx.fused_depth() == 1);
    const auto b = collaborative_decode(m, mark, ctx);
    CHECK(b.logits[vocab::kBrake] > a.logits[vocab::kBrake]);
    CHECK(argmax_action(b.logits) == vocab::kBrake);
}

TEST_CASE("naive fusion with an empty foreign cache equals plain decode") {
    const Model m = make_hazard_model(hazard_model_config(4));
    const Agent ego = think(m, 0, -1, 0b0001, 0);
    const auto mark = m.embedding(ego.tokens.back());
    KVCache a = ego.pre.cache, b = ego.pre.cache;
    const auto n = naive_full_fusion(m, mark, a, KVCache::for_model(m));
    const auto d = decode_step(m, mark, b);
    CHECK(n.hidden == d.hidden);
    CHECK(n.attention == d.attention);
    CHECK_THROWS_AS(naive_full_fusion(m, mark, a, KVCache(2, 4, 8)), ShapeMismatch);
}

TEST_CASE("fusing a copy of yourself splits every key's weight in two") {
    std::mt19937_64 rng(5);
    const Model m = init_model(oracle::small_config(rng));
    auto p = prefill(m, oracle::random_tokens(rng, 6, m.config.vocab_size));
    const std::vector<float> x(m.config.model_dim, 0.5f);
    KVCache plain = p.cache, fused = p.cache;
    const auto d = decode_step(m, x, plain);
    const auto n = naive_full_fusion(m, x, fused, p.cache);
    for (std::size_t l = 0; l < m.config.num_layers; ++l) {
        CHECK(n.attention.layers[l].context() == 13);
        for (std::size_t h = 0; h < m.config.num_heads; ++h) {
            const auto r = n.attention.row(l, h);
            for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(r[j] - r[7 + j]) <= 1e-12);
        }
    }
    // The self position is not duplicated, so the foreign share is (1 - w_self) / 2.
    const auto ci = confusion_index(n.attention);
    for (std::size_t l = 0; l < m.config.num_layers; ++l) {
        double w_self = 0.0;
        for (std::size_t h = 0; h < m.config.num_heads; ++h) w_self += n.attention.row(l, h)[6];
        w_self /= static_cast<double>(m.config.num_heads);
        CHECK(ci.per_layer[l] == doctest::Approx((1.0 - w_self) / 2.0).epsilon(1e-12));
    }
    (void)d;
}

TEST_CASE("deep fusion of a braking collaborator flips the ego, shallow fusion does not") {
    const Model m = make_hazard_model(hazard_model_config(6));
    const Agent ego = think(m, 0, -1, 0b0001, 0);
    // the collaborator brakes for a hazard on its own lane
    const Agent other = think(m, 1, 2, 0b0100);
    const auto mark = m.embedding(ego.tokens.back());

    KVCache e1 = ego.pre.cache;
    const auto naive = naive_full_fusion(m, mark, e1, other.pre.cache);
    CHECK(argmax_action(naive.logits) == vocab::kBrake);

    const Payload shallow = laco_payload(other, 1, 2.0 / 6.0);
    CHECK(shallow.l_comm() == 2);
    FusedContext ctx = attach_payload(ego.pre.cache, shallow);
    const auto sskd = collaborative_decode(m, mark, ctx);
    CHECK(argmax_action(sskd.logits) == vocab::kKeep);
    const auto ci = confusion_index(sskd.attention);
    CHECK(ci.per_layer[0] > 0.0);
    for (std::size_t l = 2; l < 6; ++l) CHECK(ci.per_layer[l] == 0.0);
}

TEST_CASE("full-depth, full-retention payload reproduces naive fusion") {
    const Model m = make_hazard_model(hazard_model_config(4));
    const Agent ego = think(m, 0, -1, 0b0001, 0);
    const Agent other = think(m, 1, 2, 0b0100);
    const auto mark = m.embedding(ego.tokens.back());

    KVCache e1 = ego.pre.cache;
    const auto naive = naive_full_fusion(m, mark, e1, other.pre.cache);
    FusedContext ctx = attach_payload(ego.pre.cache, laco_payload(other, 1, 1.0, 1.0));
    const auto full = collaborative_decode(m, mark, ctx);
    CHECK(full.hidden == naive.hidden);
    CHECK(full.logits == naive.logits);
}

TEST_CASE("received streams are never written") {
    const Model m = make_hazard_model(hazard_model_config(4));
    const Agent ego = think(m, 0, -1, 0b0001, 0);
    const Agent other = think(m, 1, 0, 0b0001);
    FusedContext ctx = attach_payload(ego.pre.cache, laco_payload(other, 1, 0.5));
    const KVCache before = ctx.foreign[0].kv;
    const std::size_t ego_before = ctx.ego.size();
    collaborative_decode(m, m.embedding(ego.tokens.back()), ctx);
    collaborative_decode(m, m.embedding(ego.tokens.back()), ctx);
    CHECK(ctx.foreign[0].kv == before);
    CHECK(ctx.ego.size() == ego_before + 2);
}

TEST_CASE("deliberate_fused without streams equals deliberate") {
    std::mt19937_64 rng(12);
    const Model m = init_model(oracle::small_config(rng));
    auto p = prefill(m, oracle::random_tokens(rng, 5, m.config.vocab_size));
    KVCache a = p.cache;
    const auto d = deliberate(m, compute_alignment(m), p.hidden, a, 4);
    FusedContext ctx{p.cache, {}};
    const auto f = deliberate_fused(m, compute_alignment(m), p.hidden, ctx, 4);
    CHECK(f.final_hidden == d.final_hidden);
    CHECK(ctx.ego == a);
    REQUIRE(f.trace.num_steps() == 4);
    for (std::size_t t = 0; t < 4; ++t) CHECK(f.trace.steps()[t].weights == d.trace.steps()[t].weights);
}

TEST_CASE("deliberate_fused keeps only ego columns") {
    const Model m = make_hazard_model(hazard_model_config(4));
    const Agent other = think(m, 1, 0, 0b0001);
    std::vector<TokenId> tokens(20, vocab::kClear);
    tokens.push_back(vocab::marker(0b0001, false));
    auto p = prefill(m, tokens);
    FusedContext ctx = attach_payload(p.cache, laco_payload(other, 1, 0.25));
    const auto f = deliberate_fused(m, compute_alignment(m), p.hidden, ctx, 3);
    for (std::size_t t = 0; t < 3; ++t) CHECK(f.trace.context(t) == 21 + t + 1);
    CHECK(ctx.ego.size() == 24);
}
