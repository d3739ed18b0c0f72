// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used only by the tests.
#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

namespace oracle {

using boost::multiprecision::cpp_int;

/// a * b mod (x^N + 1) mod p by the O(N^2) definition.
inline std::vector<uint64_t> negacyclic_schoolbook(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b,
                                                    uint64_t p) {
    const std::size_t n = a.size();
    std::vector<cpp_int> acc(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const cpp_int term = cpp_int(a[i]) * b[j];
            if (i + j < n) {
                acc[i + j] += term;
            } else {
                acc[i + j - n] -= term;
            }
        }
    }
    std::vector<uint64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        cpp_int r = acc[i] % p;
        if (r < 0) {
            r += p;
        }
        out[i] = r.convert_to<uint64_t>();
    }
    return out;
}

/// Centered CRT reconstruction of one coefficient from its residues.
inline cpp_int crt_centered(const std::vector<uint64_t>& residues, const std::vector<uint64_t>& primes) {
    cpp_int q = 1;
    for (auto p : primes) {
        q *= p;
    }
    cpp_int x = 0;
    for (std::size_t i = 0; i < primes.size(); ++i) {
        const cpp_int qi = q / primes[i];
        // inverse of qi mod p_i by brute extended Euclid on cpp_int
        cpp_int a = qi % primes[i], m = primes[i], x0 = 0, x1 = 1;
        cpp_int aa = a, mm = m;
        while (aa > 1) {
            cpp_int t = aa / mm;
            cpp_int tmp = mm;
            mm = aa % mm;
            aa = tmp;
            tmp = x0;
            x0 = x1 - t * x0;
            x1 = tmp;
        }
        if (x1 < 0) {
            x1 += m;
        }
        x += cpp_int(residues[i]) * qi * x1;
    }
    x %= q;
    if (x > q / 2) {
        x -= q;
    }
    return x;
}

/// round(x / d), ties away from zero.
inline cpp_int round_div(const cpp_int& x, const cpp_int& d) {
    cpp_int ax = x < 0 ? cpp_int(-x) : x;
    cpp_int r = (2 * ax + d) / (2 * d);
    return x < 0 ? cpp_int(-r) : r;
}

inline uint64_t mod_of(const cpp_int& x, uint64_t p) {
    cpp_int r = x % p;
    if (r < 0) {
        r += p;
    }
    return r.convert_to<uint64_t>();
}

/// Slot j of the canonical embedding: m(zeta^(5^j)), zeta = exp(i*pi/N).
inline std::vector<double> embed_naive(const std::vector<double>& coeffs) {
    const std::size_t n = coeffs.size();
    const std::size_t slots = n / 2;
    std::vector<double> out(slots);
    std::size_t g = 1;
    for (std::size_t j = 0; j < slots; ++j) {
        std::complex<double> acc = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t e = (g * k) % (2 * n);
            acc += coeffs[k] * std::polar(1.0, std::numbers::pi * static_cast<double>(e) / static_cast<double>(n));
        }
        out[j] = acc.real();
        g = (g * 5) % (2 * n);
    }
    return out;
}

/// v (length n) times M (n x m, row-major).
inline std::vector<double> vec_mat(const std::vector<double>& v, const std::vector<double>& m, std::size_t cols) {
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < v.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] += v[r] * m[r * cols + c];
        }
    }
    return out;
}

/// Valid (no padding) cross-correlation of an H x W image with a kh x kw kernel.
inline std::vector<double> conv2d_direct(const std::vector<double>& image, std::size_t h, std::size_t w,
                                         const std::vector<double>& kernel, std::size_t kh, std::size_t kw,
                                         std::size_t stride) {
    const std::size_t oh = (h - kh) / stride + 1;
    const std::size_t ow = (w - kw) / stride + 1;
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                    acc += image[(y * stride + i) * w + x * stride + j] * kernel[i * kw + j];
                }
            }
            out[y * ow + x] = acc;
        }
    }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return a.size() == b.size() ? m : INFINITY;
}

}  // namespace oracle
