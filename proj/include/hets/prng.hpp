// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace hets {

/// Seeded generator used for every random draw in the library. The engine output
/// is fully specified by the standard, and the derived samplers below avoid the
/// implementation-defined std:: distributions, so draws are reproducible across
/// toolchains.
class Prng {
public:
    explicit Prng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, bound), bound > 0, by rejection.
    uint64_t uniform_below(uint64_t bound) {
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    /// Uniform double in [lo, hi).
    double uniform_real(double lo, double hi) {
        const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * unit;
    }

    /// Independent child stream; the parent advances by one draw.
    Prng fork() { return Prng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

private:
    std::mt19937_64 engine_;
};

}  // namespace hets
