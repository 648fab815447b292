#pragma once

#include <cstdint>

namespace laco {

// PCG32 (XSH-RR output, 64-bit LCG state). Small, portable, and bit-stable
// across platforms, which std::uniform_real_distribution is not.
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0x5851f42d4c957f2dULL) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0;
        next();
        state_ += seed;
        next();
    }

    std::uint32_t next() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float unit() { return static_cast<float>(next() >> 8) * (1.0f / 16777216.0f); }

    // Uniform in [lo, hi).
    float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

    // Uniform integer in [0, n).
    std::uint32_t below(std::uint32_t n) {
        const std::uint32_t threshold = (0u - n) % n;
        for (;;) {
            const std::uint32_t r = next();
            if (r >= threshold) return r % n;
        }
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

}  // namespace laco
