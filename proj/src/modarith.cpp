// SPDX-License-Identifier: Apache-2.0
#include "hets/modarith.hpp"

#include <array>

namespace hets {

Modulus::Modulus(uint64_t value) : value_(value) {
    // floor((2^128 - 1) / p) equals floor(2^128 / p) for any p that is not a power of two.
    const u128 ratio = ~static_cast<u128>(0) / value;
    ratio_hi_ = static_cast<uint64_t>(ratio >> 64);
    ratio_lo_ = static_cast<uint64_t>(ratio);
}

uint64_t Modulus::pow(uint64_t base, uint64_t exp) const {
    uint64_t result = 1 % value_;
    base = reduce(base);
    while (exp > 0) {
        if (exp & 1) {
            result = mul(result, base);
        }
        base = mul(base, base);
        exp >>= 1;
    }
    return result;
}

namespace {

uint64_t mulmod_slow(uint64_t a, uint64_t b, uint64_t m) { return static_cast<uint64_t>(static_cast<u128>(a) * b % m); }

uint64_t powmod_slow(uint64_t b, uint64_t e, uint64_t m) {
    uint64_t r = 1;
    b %= m;
    while (e) {
        if (e & 1) {
            r = mulmod_slow(r, b, m);
        }
        b = mulmod_slow(b, b, m);
        e >>= 1;
    }
    return r;
}

}  // namespace

bool is_prime(uint64_t n) {
    if (n < 2) {
        return false;
    }
    constexpr std::array<uint64_t, 12> kBases{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
    for (uint64_t p : kBases) {
        if (n % p == 0) {
            return n == p;
        }
    }
    uint64_t d = n - 1;
    int s = 0;
    while ((d & 1) == 0) {
        d >>= 1;
        ++s;
    }
    for (uint64_t a : kBases) {
        uint64_t x = powmod_slow(a, d, n);
        if (x == 1 || x == n - 1) {
            continue;
        }
        bool composite = true;
        for (int r = 1; r < s; ++r) {
            x = mulmod_slow(x, x, n);
            if (x == n - 1) {
                composite = false;
                break;
            }
        }
        if (composite) {
            return false;
        }
    }
    return true;
}

}  // namespace hets
