#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dnl {

// PCG32 (XSH-RR, 64-bit state, 32-bit output).
//
//   state' = state · 6364136223846793005 + inc            (mod 2^64)
//   xs     = ((state >> 18) ^ state) >> 27                 (truncated to 32 bits)
//   rot    = state >> 59
//   out    = rotr32(xs, rot)                               (computed from the old state)
//
// Seeding: inc = (stream << 1) | 1; state = 0; step; state += seed; step.
// uniform() = ((a >> 5) · 2^26 + (b >> 6)) / 2^53 from two consecutive outputs a, b.
// normal()  = sqrt(-2 ln(1 - u1)) · cos(2π u2) (Box-Muller, one value per call).
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bULL, std::uint64_t stream = 0xda3e39cb94b95bdbULL)
        : state_(0), inc_((stream << 1u) | 1u) {
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }

    // [0, 1)
    double uniform() {
        const std::uint64_t a = next_u32() >> 5;
        const std::uint64_t b = next_u32() >> 6;
        return static_cast<double>(a * 67108864ULL + b) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range [lo, hi], unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi <= lo) return lo;
        const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range > 0xffffffffULL) {
            return lo + static_cast<std::int64_t>(uniform() * static_cast<double>(range));
        }
        const auto r32 = static_cast<std::uint32_t>(range);
        const std::uint32_t threshold = (~r32 + 1u) % r32;
        for (;;) {
            const std::uint32_t r = next_u32();
            if (r >= threshold) return lo + static_cast<std::int64_t>(r % r32);
        }
    }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

// Sub-seed offsets derived from the run seed (seed + offset).
namespace seeds {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kGradcheck = 4;
}  // namespace seeds

}  // namespace dnl
