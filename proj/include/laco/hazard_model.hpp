#pragma once

#include <cstddef>
#include <cstdint>

#include "laco/model.hpp"

namespace laco {

// Token layout shared by the handcrafted hazard model and the scenario
// tokenizer.
//
//   0 CLEAR  1 OBSTACLE  2 OCCLUDED  3 SELF  4 AGENT  5 GOAL
//   6..9     HAZARD on lane k (k = 0..3)
//   10..41   EGO_MARKER(path-lane mask, stopped) = 10 + 2*mask + stopped
//   42 ACCEL 43 KEEP 44 BRAKE 45 LEFT 46 RIGHT   (action slots)
namespace vocab {

inline constexpr std::size_t kLanes = 4;

inline constexpr TokenId kClear = 0;
inline constexpr TokenId kObstacle = 1;
inline constexpr TokenId kOccluded = 2;
inline constexpr TokenId kSelf = 3;
inline constexpr TokenId kAgent = 4;
inline constexpr TokenId kGoal = 5;
inline constexpr TokenId kHazardBase = 6;
inline constexpr TokenId kMarkerBase = kHazardBase + kLanes;
inline constexpr std::size_t kMarkerCount = (1u << kLanes) * 2;
inline constexpr TokenId kAccel = kMarkerBase + kMarkerCount;
inline constexpr TokenId kKeep = kAccel + 1;
inline constexpr TokenId kBrake = kAccel + 2;
inline constexpr TokenId kLeft = kAccel + 3;
inline constexpr TokenId kRight = kAccel + 4;
inline constexpr std::size_t kSize = kRight + 1;

inline constexpr TokenId hazard(std::size_t lane) { return kHazardBase + static_cast<TokenId>(lane); }
inline constexpr TokenId marker(std::uint32_t lane_mask, bool stopped) {
    return kMarkerBase + 2 * lane_mask + (stopped ? 1 : 0);
}
inline constexpr bool is_hazard(TokenId t) { return t >= kHazardBase && t < kMarkerBase; }
inline constexpr bool is_action(TokenId t) { return t >= kAccel && t <= kRight; }

}  // namespace vocab

// Residual-stream layout used by the construction. Trailing dimensions
// (model_dim - pos_dims and up) carry only the position code, which no
// constructed weight reads.
namespace hazard_dims {

inline constexpr std::size_t kBias = 0;         // 1 on every observation/marker token
inline constexpr std::size_t kHazardFlag = 1;   // 1 on HAZARD tokens
inline constexpr std::size_t kHazardLane = 2;   // one-hot lane of a HAZARD token (4 dims)
inline constexpr std::size_t kCopiedLane = 6;   // written by the copy head (4 dims)
inline constexpr std::size_t kPathLane = 10;    // marker's path-lane mask (4 dims)
inline constexpr std::size_t kBrake = 14;       // written by the layer-1 MLP: hazard on my path
inline constexpr std::size_t kStopped = 15;     // marker's stopped flag
inline constexpr std::size_t kConsensus = 16;   // written by the decision-layer head
inline constexpr std::size_t kUsed = 17;

}  // namespace hazard_dims

// Gains of the construction; exposed so tests can recompute the forward
// path by hand.
namespace hazard_gains {

inline constexpr double kScoreGap = 12.0;      // pre-softmax score of a matching key
inline constexpr float kBrakeFromPath = 4.0f;  // W_out[BRAKE] on kBrake
inline constexpr float kBrakeFromConsensus = 4.0f;
inline constexpr float kAccelFromStopped = 2.0f;
inline constexpr float kKeepFromBias = 1.0f;

}  // namespace hazard_gains

// Standard configuration hosting the construction.
ModelConfig hazard_model_config(std::size_t num_layers = 4, std::size_t max_context = 256);

// Builds a model whose behaviour is fixed analytically:
//
//  * layer 1, head 0 ("copy head"): the query reads kBias, the key reads
//    kHazardFlag, so any HAZARD key wins the softmax by kScoreGap; the value
//    carries the hazard's lane one-hot into kCopiedLane.
//  * layer 1 MLP: unit k = ReLU(copied_k + path_k - bias) and all units sum
//    into kBrake. It fires only when a copied hazard lies on a lane the
//    querying agent is about to drive.
//  * last layer, head 0 ("decision head"): the query reads kBias, the key
//    reads kBrake, the value copies kBrake into kConsensus. Positions that
//    already decided to brake attract it. This is the deep, agent-specific
//    decision state whose cross-agent fusion causes identity confusion.
//  * output head: KEEP <- bias, ACCEL <- 2*stopped, BRAKE <- 4*brake + 4*consensus.
//  * action embeddings (used only through the alignment projection during
//    latent deliberation) are chosen so the least-squares alignment maps a
//    hidden state back to the same bias/brake/stopped levels, keeping the
//    recursion at a fixed point.
//
// All other weights are zero. Throws ConfigError when the configuration
// cannot host this (head_dim < 4, too few free dimensions, vocabulary or
// MLP too small).
Model make_hazard_model(const ModelConfig& config);

// Greedy action over the full vocabulary; throws Error if the winning id is
// not an action slot.
TokenId argmax_action(std::span<const float> logits);

}  // namespace laco
