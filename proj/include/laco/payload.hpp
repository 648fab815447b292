#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "laco/chsa.hpp"
#include "laco/model.hpp"

namespace laco {

enum class DType : std::uint8_t { F32 = 0, F16 = 1 };

inline std::size_t dtype_width(DType t) { return t == DType::F16 ? 2 : 4; }

inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr char kWireMagic[4] = {'L', 'A', 'C', 'O'};
// magic, version, sender, frame, L_comm, H, d_h, salient, latent, dtype, index count
inline constexpr std::size_t kFixedHeaderBytes = 4 + 2 + 4 + 8 + 2 + 2 + 2 + 4 + 4 + 1 + 4;

// A transmissible cache: the first L_comm layers of [salient || latent].
// kv positions carry the sender's own tags (EgoPrefill, then EgoLatent).
struct Payload {
    std::uint16_t version = kWireVersion;
    AgentId sender = 0;
    std::uint64_t frame = 0;
    DType dtype = DType::F32;
    std::uint32_t salient_count = 0;
    std::uint32_t latent_count = 0;
    std::vector<std::uint32_t> source_indices;  // salient positions in the sender's prefill
    KVCache kv;

    std::size_t l_comm() const { return kv.num_layers(); }
    std::size_t tokens() const { return kv.size(); }

    bool operator==(const Payload&) const = default;
};

// max(1, round(fraction * L)).
std::size_t comm_layers(double fraction, std::size_t num_layers);

// Keeps layers [0, L_comm) of the CHSA cache. With F16 the retained values
// are rounded to half precision so the payload equals its own wire image.
Payload distill(const ChsaCache& chsa, double l_comm_fraction, AgentId sender, std::uint64_t frame,
                DType dtype = DType::F32);

// Payload for paradigms that skip pruning: every position of `kv`, first
// `layers` layers. `salient` leading positions count as prefill.
Payload make_payload(const KVCache& kv, std::size_t salient, std::size_t layers, AgentId sender,
                     std::uint64_t frame, DType dtype = DType::F32);

std::size_t payload_header_bytes(std::size_t salient);
std::size_t payload_body_bytes(std::size_t l_comm, std::size_t heads, std::size_t head_dim, std::size_t salient,
                               std::size_t latent, DType dtype);
std::size_t payload_size_bytes(std::size_t l_comm, std::size_t heads, std::size_t head_dim, std::size_t salient,
                               std::size_t latent, DType dtype);
inline std::size_t payload_size_bytes(const Payload& p) {
    return payload_size_bytes(p.l_comm(), p.kv.num_heads(), p.kv.head_dim(), p.salient_count, p.latent_count,
                              p.dtype);
}

// Layout (all integers little-endian):
//   "LACO" | u16 version | u32 sender | u64 frame | u16 L_comm | u16 H | u16 d_h
//   | u32 salient | u32 latent | u8 dtype | u32 n | u32 index[n]
//   | for each layer: keys[pos][head][d_h], then values[pos][head][d_h]
std::vector<std::uint8_t> serialize(const Payload& p);
Payload deserialize(std::span<const std::uint8_t> bytes);

struct PayloadHeader {
    std::uint16_t version = 0;
    AgentId sender = 0;
    std::uint64_t frame = 0;
    std::uint16_t l_comm = 0;
    std::uint16_t heads = 0;
    std::uint16_t head_dim = 0;
    std::uint32_t salient_count = 0;
    std::uint32_t latent_count = 0;
    DType dtype = DType::F32;
    std::vector<std::uint32_t> source_indices;
};

PayloadHeader parse_header(std::span<const std::uint8_t> bytes);

// Language-paradigm message: "LACT" | u32 sender | u64 frame | u32 n | u32 token[n].
std::vector<std::uint8_t> serialize_tokens(AgentId sender, std::uint64_t frame, std::span<const TokenId> tokens);
std::vector<TokenId> deserialize_tokens(std::span<const std::uint8_t> bytes);
inline std::size_t token_message_bytes(std::size_t n) { return 4 + 4 + 8 + 4 + 4 * n; }

}  // namespace laco
