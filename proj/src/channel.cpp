#include "laco/channel.hpp"

#include <cmath>

#include "laco/error.hpp"

namespace laco {

void ChannelConfig::validate() const {
    if (!(range_m >= 0.0) || !std::isfinite(range_m)) throw ConfigError("channel range must be finite and >= 0");
    if (!(bandwidth_bytes_per_s > 0.0)) throw ConfigError("channel bandwidth must be positive");
    if (!(base_latency_s >= 0.0)) throw ConfigError("channel base latency must be >= 0");
}

double transfer_latency(const ChannelConfig& cfg, std::size_t size_bytes) {
    return cfg.base_latency_s + static_cast<double>(size_bytes) / cfg.bandwidth_bytes_per_s;
}

SendOutcome channel_send(const ChannelConfig& cfg, std::size_t size_bytes, Point sender, Point receiver) {
    if (!std::isfinite(sender.x) || !std::isfinite(sender.y) || !std::isfinite(receiver.x) || !std::isfinite(receiver.y))
        throw ConfigError("channel_send: non-finite position");
    const double dist = std::hypot(sender.x - receiver.x, sender.y - receiver.y);
    if (dist > cfg.range_m) return Dropped{};
    return Delivered{transfer_latency(cfg, size_bytes)};
}

SendOutcome channel_send(const ChannelConfig& cfg, const Payload& p, Point sender, Point receiver) {
    return channel_send(cfg, payload_size_bytes(p), sender, receiver);
}

}  // namespace laco
