#pragma once

#include <cstddef>
#include <variant>

#include "laco/payload.hpp"

namespace laco {

inline constexpr double kDefaultRangeM = 200.0;

struct ChannelConfig {
    double range_m = kDefaultRangeM;
    double bandwidth_bytes_per_s = 1.0e6;
    double base_latency_s = 0.01;

    void validate() const;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct Delivered {
    double latency_s = 0.0;
};

struct Dropped {};  // receiver beyond range

using SendOutcome = std::variant<Delivered, Dropped>;

double transfer_latency(const ChannelConfig& cfg, std::size_t size_bytes);

// Deterministic range cutoff; a receiver exactly at range_m is reached.
SendOutcome channel_send(const ChannelConfig& cfg, std::size_t size_bytes, Point sender, Point receiver);
SendOutcome channel_send(const ChannelConfig& cfg, const Payload& p, Point sender, Point receiver);

}  // namespace laco
