// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace hets {

using u128 = unsigned __int128;

// Branch-free reductions for operands already in [0, p); data-dependent
// branches here mispredict half the time on random residues.
inline uint64_t add_mod(uint64_t a, uint64_t b, uint64_t p) {
    const uint64_t s = a + b - p;
    return s + (p & (0 - (s >> 63)));
}
inline uint64_t sub_mod(uint64_t a, uint64_t b, uint64_t p) {
    const uint64_t d = a - b;
    return d + (p & (0 - (d >> 63)));
}

/// An odd prime modulus below 2^61 with its Barrett constant floor(2^128 / p).
class Modulus {
public:
    Modulus() = default;
    explicit Modulus(uint64_t value);

    uint64_t value() const { return value_; }
    int bits() const { return std::bit_width(value_); }

    uint64_t reduce(uint64_t a) const { return a >= value_ ? a % value_ : a; }

    /// Barrett reduction of a 128-bit value.
    uint64_t reduce128(u128 z) const {
        const uint64_t z0 = static_cast<uint64_t>(z);
        const uint64_t z1 = static_cast<uint64_t>(z >> 64);
        const uint64_t carry = static_cast<uint64_t>((static_cast<u128>(z0) * ratio_lo_) >> 64);
        const u128 t2 = static_cast<u128>(z0) * ratio_hi_;
        uint64_t t1 = static_cast<uint64_t>(t2) + carry;
        const uint64_t t3 = static_cast<uint64_t>(t2 >> 64) + (t1 < carry ? 1 : 0);
        const u128 t4 = static_cast<u128>(z1) * ratio_lo_;
        const uint64_t lo = t1 + static_cast<uint64_t>(t4);
        const uint64_t carry2 = static_cast<uint64_t>(t4 >> 64) + (lo < t1 ? 1 : 0);
        const uint64_t q = z1 * ratio_hi_ + t3 + carry2;
        uint64_t r = z0 - q * value_;
        while (r >= value_) {
            r -= value_;
        }
        return r;
    }

    uint64_t add(uint64_t a, uint64_t b) const { return add_mod(a, b, value_); }
    uint64_t sub(uint64_t a, uint64_t b) const { return sub_mod(a, b, value_); }
    uint64_t neg(uint64_t a) const { return a == 0 ? 0 : value_ - a; }
    uint64_t mul(uint64_t a, uint64_t b) const { return reduce128(static_cast<u128>(a) * b); }

    uint64_t pow(uint64_t base, uint64_t exp) const;
    /// Inverse of a nonzero residue (Fermat).
    uint64_t inv(uint64_t a) const { return pow(a, value_ - 2); }

    /// Residue of a signed integer.
    uint64_t from_signed(int64_t v) const {
        if (v >= 0) {
            return reduce(static_cast<uint64_t>(v));
        }
        const uint64_t m = static_cast<uint64_t>(-(v + 1)) + 1;  // |v| without overflow
        return neg(reduce(m));
    }

    /// Centered representative in (-p/2, p/2].
    int64_t centered(uint64_t r) const {
        return r > (value_ >> 1) ? -static_cast<int64_t>(value_ - r) : static_cast<int64_t>(r);
    }

    bool operator==(const Modulus& other) const { return value_ == other.value_; }

private:
    uint64_t value_ = 0;
    uint64_t ratio_hi_ = 0;
    uint64_t ratio_lo_ = 0;
};

/// Multiplication by a fixed operand w using the precomputed floor(w * 2^64 / p).
struct ShoupConstant {
    uint64_t operand = 0;
    uint64_t quotient = 0;

    ShoupConstant() = default;
    ShoupConstant(uint64_t w, const Modulus& m)
        : operand(w), quotient(static_cast<uint64_t>((static_cast<u128>(w) << 64) / m.value())) {}

    uint64_t mul(uint64_t a, uint64_t p) const {
        const uint64_t q = static_cast<uint64_t>((static_cast<u128>(a) * quotient) >> 64);
        const uint64_t r = a * operand - q * p;
        return add_mod(r, 0, p);
    }
};

/// Deterministic Miller-Rabin for 64-bit inputs.
bool is_prime(uint64_t n);

}  // namespace hets
