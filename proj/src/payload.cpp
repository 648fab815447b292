#include "laco/payload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "laco/error.hpp"
#include "laco/half.hpp"

namespace laco {

namespace {

class Writer {
public:
    explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

    template <typename T>
    void put(T v) {
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_raw(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    void expect(const char* s, std::size_t n, const char* what) {
        need(n);
        if (std::memcmp(in_.data() + pos_, s, n) != 0) throw DecodeError(std::string("bad magic for ") + what);
        pos_ += n;
    }
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw DecodeError("truncated message");
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

template <typename T>
T narrow(std::size_t v, const char* field) {
    if (v > std::numeric_limits<T>::max()) throw ShapeMismatch(std::string(field) + " does not fit the wire field");
    return static_cast<T>(v);
}

KVCache rounded_to_half(const KVCache& kv) {
    KVCache out(kv.num_layers(), kv.num_heads(), kv.head_dim());
    const std::size_t stride = kv.num_heads() * kv.head_dim();
    std::vector<float> keys(kv.num_layers() * stride);
    std::vector<float> values(keys.size());
    for (std::size_t p = 0; p < kv.size(); ++p) {
        for (std::size_t l = 0; l < kv.num_layers(); ++l) {
            auto src_k = kv.layer_keys(l).subspan(p * stride, stride);
            auto src_v = kv.layer_values(l).subspan(p * stride, stride);
            std::transform(src_k.begin(), src_k.end(), keys.begin() + l * stride, round_to_half);
            std::transform(src_v.begin(), src_v.end(), values.begin() + l * stride, round_to_half);
        }
        out.push_position(kv.origin(p), kv.agent(p), keys, values);
    }
    return out;
}

PayloadHeader read_header(Reader& r) {
    PayloadHeader h;
    r.expect(kWireMagic, 4, "payload");
    h.version = r.get<std::uint16_t>();
    if (h.version != kWireVersion) throw DecodeError("unsupported payload version " + std::to_string(h.version));
    h.sender = r.get<std::uint32_t>();
    h.frame = r.get<std::uint64_t>();
    h.l_comm = r.get<std::uint16_t>();
    h.heads = r.get<std::uint16_t>();
    h.head_dim = r.get<std::uint16_t>();
    h.salient_count = r.get<std::uint32_t>();
    h.latent_count = r.get<std::uint32_t>();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw DecodeError("unknown dtype flag " + std::to_string(dtype));
    h.dtype = static_cast<DType>(dtype);
    const auto n = r.get<std::uint32_t>();
    if (n != h.salient_count) throw DecodeError("index table length differs from salient count");
    r.need(4ull * n);
    h.source_indices.resize(n);
    for (auto& idx : h.source_indices) idx = r.get<std::uint32_t>();
    for (std::size_t i = 1; i < n; ++i)
        if (h.source_indices[i] <= h.source_indices[i - 1]) throw DecodeError("index table not strictly increasing");
    return h;
}

}  // namespace

std::size_t comm_layers(double fraction, std::size_t num_layers) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("L_comm fraction must lie in (0, 1]");
    const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(num_layers)));
    return std::clamp<std::size_t>(n, 1, num_layers);
}

Payload make_payload(const KVCache& kv, std::size_t salient, std::size_t layers, AgentId sender,
                     std::uint64_t frame, DType dtype) {
    if (salient > kv.size()) throw ShapeMismatch("make_payload: salient count exceeds cache");
    Payload p;
    p.sender = sender;
    p.frame = frame;
    p.dtype = dtype;
    p.salient_count = narrow<std::uint32_t>(salient, "salient count");
    p.latent_count = narrow<std::uint32_t>(kv.size() - salient, "latent count");
    p.source_indices.resize(salient);
    for (std::size_t i = 0; i < salient; ++i) p.source_indices[i] = static_cast<std::uint32_t>(i);
    p.kv = kv.first_layers(layers);
    p.kv.set_agent(sender);
    if (dtype == DType::F16) p.kv = rounded_to_half(p.kv);
    return p;
}

Payload distill(const ChsaCache& chsa, double l_comm_fraction, AgentId sender, std::uint64_t frame, DType dtype) {
    const std::size_t layers = comm_layers(l_comm_fraction, chsa.kv.num_layers());
    Payload p = make_payload(chsa.kv, chsa.salient_count, layers, sender, frame, dtype);
    for (std::size_t i = 0; i < chsa.selected.size(); ++i)
        p.source_indices[i] = narrow<std::uint32_t>(chsa.selected[i], "source index");
    return p;
}

std::size_t payload_header_bytes(std::size_t salient) { return kFixedHeaderBytes + 4 * salient; }

std::size_t payload_body_bytes(std::size_t l_comm, std::size_t heads, std::size_t head_dim, std::size_t salient,
                               std::size_t latent, DType dtype) {
    return l_comm * heads * (salient + latent) * head_dim * 2 * dtype_width(dtype);
}

std::size_t payload_size_bytes(std::size_t l_comm, std::size_t heads, std::size_t head_dim, std::size_t salient,
                               std::size_t latent, DType dtype) {
    return payload_header_bytes(salient) + payload_body_bytes(l_comm, heads, head_dim, salient, latent, dtype);
}

std::vector<std::uint8_t> serialize(const Payload& p) {
    if (p.salient_count + static_cast<std::size_t>(p.latent_count) != p.kv.size())
        throw ShapeMismatch("serialize: counts do not match cache positions");
    if (p.source_indices.size() != p.salient_count) throw ShapeMismatch("serialize: index table length mismatch");

    Writer w(payload_size_bytes(p));
    w.put_raw(kWireMagic, 4);
    w.put(p.version);
    w.put(p.sender);
    w.put(p.frame);
    w.put(narrow<std::uint16_t>(p.l_comm(), "L_comm"));
    w.put(narrow<std::uint16_t>(p.kv.num_heads(), "H"));
    w.put(narrow<std::uint16_t>(p.kv.head_dim(), "d_h"));
    w.put(p.salient_count);
    w.put(p.latent_count);
    w.put(static_cast<std::uint8_t>(p.dtype));
    w.put(narrow<std::uint32_t>(p.source_indices.size(), "index count"));
    for (auto idx : p.source_indices) w.put(idx);

    for (std::size_t l = 0; l < p.l_comm(); ++l) {
        for (auto span : {p.kv.layer_keys(l), p.kv.layer_values(l)}) {
            if (p.dtype == DType::F16) {
                for (float f : span) w.put(float_to_half(f));
            } else {
                for (float f : span) w.put_f32(f);
            }
        }
    }
    return w.take();
}

PayloadHeader parse_header(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    return read_header(r);
}

Payload deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    PayloadHeader h = read_header(r);

    const std::size_t tokens = static_cast<std::size_t>(h.salient_count) + h.latent_count;
    // Saturating product so a hostile header cannot wrap the size check.
    std::uint64_t body = 1;
    for (std::uint64_t f : {std::uint64_t{h.l_comm}, std::uint64_t{h.heads}, std::uint64_t{tokens},
                            std::uint64_t{h.head_dim}, std::uint64_t{2}, std::uint64_t{dtype_width(h.dtype)}}) {
        if (f != 0 && body > std::numeric_limits<std::uint64_t>::max() / f) {
            body = std::numeric_limits<std::uint64_t>::max();
            break;
        }
        body *= f;
    }
    if (r.remaining() < body) throw DecodeError("truncated payload body");
    if (r.remaining() > body) throw DecodeError("trailing bytes after payload body");
    if (tokens > 0 && (h.heads == 0 || h.head_dim == 0)) throw DecodeError("zero-sized head shape");

    Payload p;
    p.version = h.version;
    p.sender = h.sender;
    p.frame = h.frame;
    p.dtype = h.dtype;
    p.salient_count = h.salient_count;
    p.latent_count = h.latent_count;
    p.source_indices = std::move(h.source_indices);

    const std::size_t stride = static_cast<std::size_t>(h.heads) * h.head_dim;
    std::vector<std::vector<float>> keys(h.l_comm), values(h.l_comm);
    auto read_elem = [&]() -> float {
        return h.dtype == DType::F16 ? half_to_float(r.get<std::uint16_t>()) : std::bit_cast<float>(r.get<std::uint32_t>());
    };
    for (std::size_t l = 0; l < h.l_comm; ++l) {
        keys[l].resize(tokens * stride);
        values[l].resize(tokens * stride);
        for (float& f : keys[l]) f = read_elem();
        for (float& f : values[l]) f = read_elem();
    }

    p.kv = KVCache(h.l_comm, h.heads, h.head_dim);
    std::vector<float> k(h.l_comm * stride), v(h.l_comm * stride);
    for (std::size_t pos = 0; pos < tokens; ++pos) {
        for (std::size_t l = 0; l < h.l_comm; ++l) {
            std::copy_n(keys[l].begin() + pos * stride, stride, k.begin() + l * stride);
            std::copy_n(values[l].begin() + pos * stride, stride, v.begin() + l * stride);
        }
        p.kv.push_position(pos < h.salient_count ? Origin::EgoPrefill : Origin::EgoLatent, h.sender, k, v);
    }
    return p;
}

std::vector<std::uint8_t> serialize_tokens(AgentId sender, std::uint64_t frame, std::span<const TokenId> tokens) {
    Writer w(token_message_bytes(tokens.size()));
    w.put_raw("LACT", 4);
    w.put(sender);
    w.put(frame);
    w.put(narrow<std::uint32_t>(tokens.size(), "token count"));
    for (TokenId t : tokens) w.put(t);
    return w.take();
}

std::vector<TokenId> deserialize_tokens(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.expect("LACT", 4, "token message");
    r.get<std::uint32_t>();
    r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    if (r.remaining() != 4ull * n) throw DecodeError("token message length mismatch");
    std::vector<TokenId> out(n);
    for (auto& t : out) t = r.get<std::uint32_t>();
    return out;
}

}  // namespace laco
