// SPDX-License-Identifier: Apache-2.0
#include "hets/scheme.hpp"

#include <algorithm>
#include <bit>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "hets/error.hpp"
#include "hets/parallel.hpp"

namespace hets {

namespace {

using boost::multiprecision::cpp_int;

constexpr double kMaxCoefficient = 0x1.0p62;

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

std::vector<std::size_t> iota_ids(std::size_t count) {
    std::vector<std::size_t> ids(count);
    for (std::size_t i = 0; i < count; ++i) {
        ids[i] = i;
    }
    return ids;
}

void bit_reverse_permute(std::vector<std::complex<double>>& vals) {
    const std::size_t n = vals.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(vals[i], vals[j]);
        }
    }
}

}  // namespace

void SchemeParams::validate() const {
    ring.validate();
    require(ring.degree >= 4, ErrorCode::InvalidParams, "ring degree must be at least 4");
    require(ring.primes.size() >= 2, ErrorCode::InvalidParams,
            "chain needs at least two primes (one data prime and the key-switching prime)");
    require(scale > 0.0, ErrorCode::InvalidParams, "scale must be positive");
    int exponent = 0;
    require(std::frexp(scale, &exponent) == 0.5, ErrorCode::InvalidParams, "scale must be a power of two");
    require(scale < static_cast<double>(ring.primes.front()), ErrorCode::InvalidParams,
            "scale " + fmt_double(scale) + " must be below the base prime");
    for (std::size_t i = 1; i + 1 < ring.primes.size(); ++i) {
        require(scale < static_cast<double>(ring.primes[i]), ErrorCode::InvalidParams,
                "scale " + fmt_double(scale) + " must be below every rescaling prime (prime " + std::to_string(i) +
                    " is " + std::to_string(ring.primes[i]) + ")");
    }
    require(std::bit_width(ring.primes.back()) >= 8, ErrorCode::InvalidParams, "key-switching prime is too small");
}

SchemeParams make_params(std::string name, std::size_t degree, std::span<const int> bit_sizes, double scale,
                         std::string security_note) {
    require(bit_sizes.size() >= 2, ErrorCode::InvalidParams, "need at least two prime sizes");
    SchemeParams params;
    params.name = std::move(name);
    params.scale = scale;
    params.security_note = std::move(security_note);
    params.ring.degree = degree;
    require(degree >= 4 && std::has_single_bit(degree), ErrorCode::InvalidParams, "degree must be a power of two");
    for (std::size_t i = 0; i < bit_sizes.size(); ++i) {
        const int bits = bit_sizes[i];
        require(bits >= 8 && bits <= 61, ErrorCode::InvalidParams, "prime sizes must be within [8, 61] bits");
        uint64_t start = uint64_t{1} << (bits - 1);
        const bool rescaling = i > 0 && i + 1 < bit_sizes.size();
        if (rescaling && scale >= static_cast<double>(start)) {
            start = static_cast<uint64_t>(scale) + 1;
        }
        params.ring.primes.push_back(next_ntt_prime(degree, start, params.ring.primes));
    }
    params.validate();
    return params;
}

SchemeParams profile_params(const std::string& name) {
    if (name == "mnist-8192") {
        const int bits[] = {31, 25, 25, 25, 25, 25, 25, 25};
        return make_params(name, 8192, bits, 0x1.0p21, "128-bit (claimed, not verified)");
    }
    if (name == "test-4096") {
        const int bits[] = {40, 30, 30, 40};
        return make_params(name, 4096, bits, 0x1.0p30, "test only");
    }
    fail(ErrorCode::InvalidParams, "unknown profile '" + name + "' (expected mnist-8192 or test-4096)");
}

std::vector<std::string> profile_names() { return {"mnist-8192", "test-4096"}; }

Scheme::Scheme(SchemeParams params) : params_(std::move(params)) {
    params_.validate();
    ring_ = std::make_shared<const RingContext>(params_.ring);
    digit_bits_ = std::max(1, static_cast<int>(std::bit_width(params_.special_prime())) - 10);

    const std::size_t n = degree();
    const std::size_t m = 2 * n;
    rot_group_.resize(slot_count());
    std::size_t g = 1;
    for (auto& r : rot_group_) {
        r = g;
        g = (g * 5) % m;
    }
    ksi_pows_.resize(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
        ksi_pows_[j] = {std::cos(angle), std::sin(angle)};
    }
}

std::size_t Scheme::pieces_for(std::size_t chain_index) const {
    const int bits = static_cast<int>(std::bit_width(params_.ring.primes[chain_index]));
    return static_cast<std::size_t>((bits + digit_bits_ - 1) / digit_bits_);
}

double Scheme::log_modulus(int level) const {
    double total = 0.0;
    for (int i = 0; i <= level; ++i) {
        total += std::log2(static_cast<double>(chain_prime(i)));
    }
    return total;
}

std::vector<std::size_t> Scheme::level_primes(int level) const { return iota_ids(static_cast<std::size_t>(level) + 1); }

// Canonical embedding transforms over the 5-power orbit.

void Scheme::special_fft(std::vector<std::complex<double>>& vals) const {
    const std::size_t size = vals.size();
    const std::size_t m = 2 * degree();
    bit_reverse_permute(vals);
    for (std::size_t len = 2; len <= size; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t quarter_period = len << 2;
        const std::size_t gap = m / quarter_period;
        for (std::size_t i = 0; i < size; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const std::size_t idx = (rot_group_[j] % quarter_period) * gap;
                const std::complex<double> u = vals[i + j];
                const std::complex<double> v = vals[i + j + half] * ksi_pows_[idx];
                vals[i + j] = u + v;
                vals[i + j + half] = u - v;
            }
        }
    }
}

void Scheme::special_fft_inverse(std::vector<std::complex<double>>& vals) const {
    const std::size_t size = vals.size();
    const std::size_t m = 2 * degree();
    for (std::size_t len = size; len >= 2; len >>= 1) {
        const std::size_t half = len >> 1;
        const std::size_t quarter_period = len << 2;
        const std::size_t gap = m / quarter_period;
        for (std::size_t i = 0; i < size; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const std::size_t idx = (quarter_period - (rot_group_[j] % quarter_period)) * gap;
                const std::complex<double> u = vals[i + j] + vals[i + j + half];
                const std::complex<double> v = (vals[i + j] - vals[i + j + half]) * ksi_pows_[idx];
                vals[i + j] = u;
                vals[i + j + half] = v;
            }
        }
    }
    bit_reverse_permute(vals);
    const double inv = 1.0 / static_cast<double>(size);
    for (auto& v : vals) {
        v *= inv;
    }
}

Plaintext Scheme::encode(std::span<const double> values, int level, double scale) const {
    const std::size_t slots = slot_count();
    require(values.size() <= slots, ErrorCode::TooManyValues,
            std::to_string(values.size()) + " values exceed " + std::to_string(slots) + " slots");
    require(level >= 0 && level <= top_level(), ErrorCode::LevelMismatch, "invalid plaintext level");
    require(scale > 0.0, ErrorCode::InvalidOperand, "plaintext scale must be positive");

    std::vector<std::complex<double>> u(slots);
    for (std::size_t i = 0; i < values.size(); ++i) {
        u[i] = values[i];
    }
    special_fft_inverse(u);
    std::vector<int64_t> coeffs(degree());
    for (std::size_t i = 0; i < slots; ++i) {
        const double re = std::round(u[i].real() * scale);
        const double im = std::round(u[i].imag() * scale);
        require(std::abs(re) < kMaxCoefficient && std::abs(im) < kMaxCoefficient, ErrorCode::ScaleOverflow,
                "encoded coefficient exceeds 2^62; reduce the scale or the values");
        coeffs[i] = static_cast<int64_t>(re);
        coeffs[i + slots] = static_cast<int64_t>(im);
    }
    Plaintext pt{RingPoly::from_signed(ring_, level_primes(level), coeffs), scale, level};
    pt.poly.ntt_inplace();
    return pt;
}

std::vector<double> Scheme::decode(const Plaintext& pt) const {
    RingPoly poly = pt.poly.domain() == Domain::Evaluation ? ntt_transform(pt.poly, NttDirection::Inverse) : pt.poly;
    const std::size_t n = degree();
    const std::size_t rows = poly.prime_count();
    std::vector<long double> coeffs(n);
    if (rows == 1) {
        const Modulus& m = poly.modulus(0);
        auto r = poly.row(0);
        for (std::size_t i = 0; i < n; ++i) {
            coeffs[i] = static_cast<long double>(m.centered(r[i]));
        }
    } else {
        cpp_int q = 1;
        for (std::size_t k = 0; k < rows; ++k) {
            q *= poly.modulus(k).value();
        }
        const cpp_int half = q / 2;
        std::vector<cpp_int> basis(rows);
        std::vector<uint64_t> inv(rows);
        for (std::size_t k = 0; k < rows; ++k) {
            const Modulus& m = poly.modulus(k);
            basis[k] = q / m.value();
            inv[k] = m.inv(static_cast<uint64_t>(basis[k] % m.value()));
        }
        for (std::size_t i = 0; i < n; ++i) {
            cpp_int x = 0;
            for (std::size_t k = 0; k < rows; ++k) {
                const Modulus& m = poly.modulus(k);
                x += basis[k] * m.mul(poly.row(k)[i], inv[k]);
            }
            x %= q;
            if (x > half) {
                x -= q;
            }
            coeffs[i] = x.convert_to<long double>();
        }
    }
    const std::size_t slots = slot_count();
    std::vector<std::complex<double>> vals(slots);
    const long double inv_scale = 1.0L / static_cast<long double>(pt.scale);
    for (std::size_t i = 0; i < slots; ++i) {
        vals[i] = {static_cast<double>(coeffs[i] * inv_scale), static_cast<double>(coeffs[i + slots] * inv_scale)};
    }
    special_fft(vals);
    std::vector<double> out(slots);
    for (std::size_t i = 0; i < slots; ++i) {
        out[i] = vals[i].real();
    }
    return out;
}

SecretKey Scheme::generate_secret_key(Prng& rng) const {
    SecretKey sk;
    sk.coeffs = sample_signed(degree(), SampleKind::Ternary, rng);
    sk.s = RingPoly::from_signed(ring_, iota_ids(params_.chain_length()), sk.coeffs);
    sk.s.ntt_inplace();
    return sk;
}

PublicKey Scheme::generate_public_key(const SecretKey& sk, Prng& rng) const {
    const auto ids = level_primes(top_level());
    PublicKey pk;
    pk.a = sample_poly(ring_, ids, SampleKind::Uniform, rng);
    pk.a = RingPoly(pk.a);  // uniform residues are uniform in either domain
    RingPoly a_eval(ring_, ids, Domain::Evaluation);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        std::copy(pk.a.row(k).begin(), pk.a.row(k).end(), a_eval.row(k).begin());
    }
    pk.a = std::move(a_eval);
    RingPoly e = sample_poly(ring_, ids, SampleKind::Error, rng);
    e.ntt_inplace();
    pk.b = poly_mul(pk.a, sk.s.select_primes(ids));
    pk.b.negate_inplace();
    pk.b.add_inplace(e);
    return pk;
}

void Scheme::expand_key(KeySwitchKey& key) const {
    Prng arng(key.seed);
    const auto ids = iota_ids(params_.chain_length());
    key.a.assign(params_.data_prime_count(), {});
    for (std::size_t i = 0; i < params_.data_prime_count(); ++i) {
        for (std::size_t j = 0; j < pieces_for(i); ++j) {
            RingPoly a(ring_, ids, Domain::Evaluation);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                const uint64_t p = a.modulus(k).value();
                for (auto& x : a.row(k)) {
                    x = arng.uniform_below(p);
                }
            }
            key.a[i].push_back(std::move(a));
        }
    }
}

KeySwitchKey Scheme::make_switch_key(const RingPoly& target, const SecretKey& sk, Prng& rng) const {
    KeySwitchKey key;
    key.seed = rng.next_u64();
    expand_key(key);
    const auto ids = iota_ids(params_.chain_length());
    const std::size_t chain = params_.data_prime_count();
    key.b.assign(chain, {});
    for (std::size_t i = 0; i < chain; ++i) {
        const Modulus& qi = ring_->modulus(i);
        const uint64_t p_mod = qi.reduce(params_.special_prime());
        for (std::size_t j = 0; j < pieces_for(i); ++j) {
            RingPoly e = sample_poly(ring_, ids, SampleKind::Error, rng);
            e.ntt_inplace();
            RingPoly b = poly_mul(key.a[i][j], sk.s);
            b.negate_inplace();
            b.add_inplace(e);
            const uint64_t factor = qi.mul(p_mod, qi.pow(2, static_cast<uint64_t>(digit_bits_) * j));
            const ShoupConstant f(factor, qi);
            auto dst = b.row(i);
            auto src = target.row(i);
            for (std::size_t n = 0; n < dst.size(); ++n) {
                dst[n] = qi.add(dst[n], f.mul(src[n], qi.value()));
            }
            key.b[i].push_back(std::move(b));
        }
    }
    return key;
}

RelinKey Scheme::generate_relin_key(const SecretKey& sk, Prng& rng) const {
    return RelinKey{make_switch_key(poly_mul(sk.s, sk.s), sk, rng)};
}

GaloisKeys Scheme::generate_galois_keys(const SecretKey& sk, std::span<const int> steps, Prng& rng) const {
    GaloisKeys gk;
    gk.steps.assign(steps.begin(), steps.end());
    std::set<std::size_t> normalized;
    for (int step : steps) {
        require(step != 0 && static_cast<std::size_t>(std::abs(step)) < slot_count(), ErrorCode::InvalidRotationStep,
                "rotation step " + std::to_string(step) + " must be nonzero with |step| < " +
                    std::to_string(slot_count()));
        normalized.insert(normalize_step(step));
    }
    const RingPoly s_coeff = RingPoly::from_signed(ring_, iota_ids(params_.chain_length()), sk.coeffs);
    for (std::size_t k : normalized) {
        RingPoly target = apply_automorphism(s_coeff, galois_element(k));
        target.ntt_inplace();
        gk.keys.emplace(k, make_switch_key(target, sk, rng));
    }
    return gk;
}

KeyBundle keygen(const Scheme& scheme, std::span<const int> rotation_steps, Prng& rng) {
    for (int step : rotation_steps) {
        require(step != 0 && static_cast<std::size_t>(std::abs(step)) < scheme.slot_count(),
                ErrorCode::InvalidRotationStep, "rotation step " + std::to_string(step) + " is out of range");
    }
    KeyBundle keys;
    keys.secret = scheme.generate_secret_key(rng);
    keys.public_key = scheme.generate_public_key(keys.secret, rng);
    keys.relin = scheme.generate_relin_key(keys.secret, rng);
    keys.galois = scheme.generate_galois_keys(keys.secret, rotation_steps, rng);
    return keys;
}

Ciphertext Scheme::encrypt(const Plaintext& pt, const PublicKey& pk, Prng& rng) const {
    require(pt.level >= 0 && pt.level <= top_level(), ErrorCode::LevelMismatch, "plaintext level is invalid");
    const auto ids = level_primes(pt.level);
    RingPoly u = sample_poly(ring_, ids, SampleKind::Ternary, rng);
    u.ntt_inplace();
    RingPoly e0 = sample_poly(ring_, ids, SampleKind::Error, rng);
    RingPoly e1 = sample_poly(ring_, ids, SampleKind::Error, rng);
    e0.ntt_inplace();
    e1.ntt_inplace();
    RingPoly c0 = poly_mul(pk.b.select_primes(ids), u);
    c0.add_inplace(e0);
    c0.add_inplace(pt.poly);
    RingPoly c1 = poly_mul(pk.a.select_primes(ids), u);
    c1.add_inplace(e1);
    Ciphertext ct;
    ct.parts = {std::move(c0), std::move(c1)};
    ct.scale = pt.scale;
    ct.level = pt.level;
    return ct;
}

Ciphertext Scheme::encrypt_symmetric(const Plaintext& pt, const SecretKey& sk, Prng& rng) const {
    require(pt.level >= 0 && pt.level <= top_level(), ErrorCode::LevelMismatch, "plaintext level is invalid");
    const auto ids = level_primes(pt.level);
    const RingPoly uniform = sample_poly(ring_, ids, SampleKind::Uniform, rng);
    RingPoly a(ring_, ids, Domain::Evaluation);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        std::copy(uniform.row(k).begin(), uniform.row(k).end(), a.row(k).begin());
    }
    RingPoly e = sample_poly(ring_, ids, SampleKind::Error, rng);
    e.ntt_inplace();
    RingPoly c0 = poly_mul(a, sk.s.select_primes(ids));
    c0.negate_inplace();
    c0.add_inplace(e);
    c0.add_inplace(pt.poly);
    Ciphertext ct;
    ct.parts = {std::move(c0), std::move(a)};
    ct.scale = pt.scale;
    ct.level = pt.level;
    return ct;
}

Plaintext Scheme::decrypt(const Ciphertext& ct, const SecretKey& sk) const {
    const auto ids = level_primes(ct.level);
    const RingPoly s = sk.s.select_primes(ids);
    RingPoly m = ct.parts[0];
    RingPoly power = s;
    for (std::size_t i = 1; i < ct.size(); ++i) {
        m.add_inplace(poly_mul(ct.parts[i], power));
        if (i + 1 < ct.size()) {
            power = poly_mul(power, s);
        }
    }
    return Plaintext{std::move(m), ct.scale, ct.level};
}

void Scheme::check_same_level(int a, int b) const {
    require(a == b, ErrorCode::LevelMismatch, "operands are at levels " + std::to_string(a) + " and " + std::to_string(b));
}

void Scheme::check_same_scale(double a, double b) const {
    require(std::abs(a - b) <= kScaleTolerance * std::max(std::abs(a), std::abs(b)), ErrorCode::ScaleMismatch,
            "operand scales " + fmt_double(a) + " and " + fmt_double(b) + " differ");
}

void Scheme::check_product_scale(int level, double a, double b) const {
    require(std::log2(a) + std::log2(b) < log_modulus(level) - 1.0, ErrorCode::ScaleOverflow,
            "product scale 2^" + fmt_double(std::log2(a) + std::log2(b)) + " does not fit the level-" +
                std::to_string(level) + " modulus");
}

Ciphertext Scheme::add(const Ciphertext& a, const Ciphertext& b) const {
    check_same_level(a.level, b.level);
    check_same_scale(a.scale, b.scale);
    Ciphertext out = a.size() >= b.size() ? a : b;
    const Ciphertext& other = a.size() >= b.size() ? b : a;
    for (std::size_t i = 0; i < other.size(); ++i) {
        out.parts[i].add_inplace(other.parts[i]);
    }
    return out;
}

Ciphertext Scheme::sub(const Ciphertext& a, const Ciphertext& b) const { return add(a, negate(b)); }

Ciphertext Scheme::negate(const Ciphertext& a) const {
    Ciphertext out = a;
    for (auto& p : out.parts) {
        p.negate_inplace();
    }
    return out;
}

Ciphertext Scheme::add_plain(const Ciphertext& a, const Plaintext& b) const {
    check_same_level(a.level, b.level);
    check_same_scale(a.scale, b.scale);
    Ciphertext out = a;
    out.parts[0].add_inplace(b.poly);
    return out;
}

Ciphertext Scheme::sub_plain(const Ciphertext& a, const Plaintext& b) const {
    check_same_level(a.level, b.level);
    check_same_scale(a.scale, b.scale);
    Ciphertext out = a;
    out.parts[0].sub_inplace(b.poly);
    return out;
}

Ciphertext Scheme::multiply(const Ciphertext& a, const Ciphertext& b) const {
    require(a.size() == 2 && b.size() == 2, ErrorCode::InvalidOperand, "multiply needs relinearized operands");
    check_same_level(a.level, b.level);
    check_product_scale(a.level, a.scale, b.scale);
    Ciphertext out;
    out.level = a.level;
    out.scale = a.scale * b.scale;
    RingPoly d0 = poly_mul(a.parts[0], b.parts[0]);
    RingPoly d1 = poly_mul(a.parts[0], b.parts[1]);
    d1.add_inplace(poly_mul(a.parts[1], b.parts[0]));
    RingPoly d2 = poly_mul(a.parts[1], b.parts[1]);
    out.parts = {std::move(d0), std::move(d1), std::move(d2)};
    return out;
}

Ciphertext Scheme::multiply_plain(const Ciphertext& a, const Plaintext& b) const {
    check_same_level(a.level, b.level);
    check_product_scale(a.level, a.scale, b.scale);
    Ciphertext out = a;
    for (auto& p : out.parts) {
        p.mul_pointwise_inplace(b.poly);
    }
    out.scale = a.scale * b.scale;
    return out;
}

std::pair<RingPoly, RingPoly> Scheme::key_switch(const RingPoly& c, const KeySwitchKey& key) const {
    require(c.domain() == Domain::Coefficient, ErrorCode::DomainMismatch, "key switch input must be in coefficient form");
    const std::size_t level_rows = c.prime_count();
    std::vector<std::size_t> ids = iota_ids(level_rows);
    const std::size_t special = special_prime_id();
    ids.push_back(special);
    const std::size_t n = degree();
    const int w = digit_bits_;
    const uint64_t mask = w >= 64 ? ~uint64_t{0} : (uint64_t{1} << w) - 1;

    RingPoly acc0(ring_, ids, Domain::Evaluation);
    RingPoly acc1(ring_, ids, Domain::Evaluation);
    parallel_for(ids.size(), [&](std::size_t t) {
        const std::size_t pid = ids[t];
        const Modulus& m = ring_->modulus(pid);
        std::vector<uint64_t> tmp(n);
        // Products stay below 2^122, so 32 of them fit a 128-bit accumulator.
        std::vector<u128> lazy0(n, 0), lazy1(n, 0);
        int pending = 0;
        auto flush = [&] {
            auto out0 = acc0.row(t);
            auto out1 = acc1.row(t);
            for (std::size_t x = 0; x < n; ++x) {
                out0[x] = m.add(out0[x], m.reduce128(lazy0[x]));
                out1[x] = m.add(out1[x], m.reduce128(lazy1[x]));
                lazy0[x] = lazy1[x] = 0;
            }
            pending = 0;
        };
        for (std::size_t i = 0; i < level_rows; ++i) {
            auto src = c.row(i);
            for (std::size_t j = 0; j < pieces_for(i); ++j) {
                const int shift = w * static_cast<int>(j);
                for (std::size_t x = 0; x < n; ++x) {
                    tmp[x] = m.reduce((src[x] >> shift) & mask);
                }
                ring_->forward_ntt(tmp, pid);
                auto kb = key.b[i][j].row(pid);
                auto ka = key.a[i][j].row(pid);
                for (std::size_t x = 0; x < n; ++x) {
                    lazy0[x] += static_cast<u128>(tmp[x]) * kb[x];
                    lazy1[x] += static_cast<u128>(tmp[x]) * ka[x];
                }
                if (++pending == 32) {
                    flush();
                }
            }
        }
        flush();
    });

    // Divide by the key-switching prime and drop it.
    const Modulus& p_mod = ring_->modulus(special);
    auto mod_down = [&](const RingPoly& acc) {
        RingPoly out(ring_, iota_ids(level_rows), Domain::Evaluation);
        std::vector<uint64_t> last(acc.row(level_rows).begin(), acc.row(level_rows).end());
        ring_->inverse_ntt(last, special);
        parallel_for(level_rows, [&](std::size_t k) {
            const Modulus& m = ring_->modulus(k);
            std::vector<uint64_t> tmp(n);
            for (std::size_t x = 0; x < n; ++x) {
                tmp[x] = m.from_signed(p_mod.centered(last[x]));
            }
            ring_->forward_ntt(tmp, k);
            const ShoupConstant inv(m.inv(m.reduce(p_mod.value())), m);
            auto src = acc.row(k);
            auto dst = out.row(k);
            for (std::size_t x = 0; x < n; ++x) {
                dst[x] = inv.mul(m.sub(src[x], tmp[x]), m.value());
            }
        });
        return out;
    };
    return {mod_down(acc0), mod_down(acc1)};
}

Ciphertext Scheme::relinearize(const Ciphertext& a, const RelinKey& rlk) const {
    if (a.size() == 2) {
        return a;
    }
    require(a.size() == 3, ErrorCode::InvalidOperand, "relinearize expects a size-3 ciphertext");
    auto [u0, u1] = key_switch(ntt_transform(a.parts[2], NttDirection::Inverse), rlk.key);
    Ciphertext out;
    out.level = a.level;
    out.scale = a.scale;
    out.parts = {poly_add(a.parts[0], u0), poly_add(a.parts[1], u1)};
    return out;
}

RingPoly Scheme::rescale_poly(const RingPoly& p) const {
    const std::size_t rows = p.prime_count();
    const std::size_t last_id = rows - 1;
    const Modulus& q_last = ring_->modulus(last_id);
    const std::size_t n = degree();
    std::vector<uint64_t> last(p.row(last_id).begin(), p.row(last_id).end());
    ring_->inverse_ntt(last, last_id);
    RingPoly out(ring_, iota_ids(rows - 1), Domain::Evaluation);
    parallel_for(rows - 1, [&](std::size_t k) {
        const Modulus& m = ring_->modulus(k);
        std::vector<uint64_t> tmp(n);
        for (std::size_t x = 0; x < n; ++x) {
            tmp[x] = m.from_signed(q_last.centered(last[x]));
        }
        ring_->forward_ntt(tmp, k);
        const ShoupConstant inv(m.inv(m.reduce(q_last.value())), m);
        auto src = p.row(k);
        auto dst = out.row(k);
        for (std::size_t x = 0; x < n; ++x) {
            dst[x] = inv.mul(m.sub(src[x], tmp[x]), m.value());
        }
    });
    return out;
}

Ciphertext Scheme::rescale(const Ciphertext& a) const {
    require(a.level >= 1, ErrorCode::LevelExhausted, "no chain prime left to rescale by (level 0)");
    Ciphertext out;
    out.level = a.level - 1;
    out.scale = a.scale / static_cast<double>(chain_prime(a.level));
    for (const auto& p : a.parts) {
        out.parts.push_back(rescale_poly(p));
    }
    return out;
}

Ciphertext Scheme::mod_drop(const Ciphertext& a, int level) const {
    require(level >= 0 && level <= a.level, ErrorCode::LevelMismatch,
            "cannot move a level-" + std::to_string(a.level) + " ciphertext to level " + std::to_string(level));
    if (level == a.level) {
        return a;
    }
    Ciphertext out;
    out.level = level;
    out.scale = a.scale;
    for (const auto& p : a.parts) {
        out.parts.push_back(p.select_primes(level_primes(level)));
    }
    return out;
}

std::size_t Scheme::normalize_step(long long step) const {
    const long long slots = static_cast<long long>(slot_count());
    return static_cast<std::size_t>(((step % slots) + slots) % slots);
}

std::size_t Scheme::galois_element(std::size_t normalized_step) const {
    const std::size_t m = 2 * degree();
    std::size_t g = 1;
    std::size_t base = 5;
    std::size_t e = normalized_step;
    while (e) {
        if (e & 1) {
            g = (g * base) % m;
        }
        base = (base * base) % m;
        e >>= 1;
    }
    return g;
}

std::optional<std::vector<std::size_t>> Scheme::rotation_plan(long long step,
                                                              const std::vector<std::size_t>& available) const {
    const std::size_t k = normalize_step(step);
    if (k == 0) {
        return std::vector<std::size_t>{};
    }
    auto has = [&](std::size_t s) { return std::find(available.begin(), available.end(), s) != available.end(); };
    if (has(k)) {
        return std::vector<std::size_t>{k};
    }
    std::vector<std::size_t> plan;
    for (std::size_t bit = 1; bit <= k; bit <<= 1) {
        if (k & bit) {
            if (!has(bit)) {
                return std::nullopt;
            }
            plan.push_back(bit);
        }
    }
    return plan;
}

std::optional<std::vector<std::size_t>> Scheme::rotation_plan(long long step, const GaloisKeys& gk) const {
    std::vector<std::size_t> available;
    for (const auto& [k, key] : gk.keys) {
        available.push_back(k);
    }
    return rotation_plan(step, available);
}

Ciphertext Scheme::rotate_single(const Ciphertext& a, std::size_t normalized_step, const KeySwitchKey& key) const {
    require(a.size() == 2, ErrorCode::InvalidOperand, "rotate needs a relinearized ciphertext");
    const std::size_t g = galois_element(normalized_step);
    RingPoly c0 = apply_automorphism(ntt_transform(a.parts[0], NttDirection::Inverse), g);
    c0.ntt_inplace();
    RingPoly c1 = apply_automorphism(ntt_transform(a.parts[1], NttDirection::Inverse), g);
    auto [u0, u1] = key_switch(c1, key);
    u0.add_inplace(c0);
    Ciphertext out;
    out.level = a.level;
    out.scale = a.scale;
    out.parts = {std::move(u0), std::move(u1)};
    return out;
}

Ciphertext Scheme::rotate(const Ciphertext& a, long long step, const GaloisKeys& gk) const {
    const auto plan = rotation_plan(step, gk);
    require(plan.has_value(), ErrorCode::MissingGaloisKey,
            "no Galois key (or power-of-two decomposition) for rotation step " + std::to_string(step));
    Ciphertext out = a;
    for (std::size_t s : *plan) {
        out = rotate_single(out, s, gk.keys.at(s));
    }
    return out;
}

Ciphertext Scheme::eval_mul(const Ciphertext& a, const Ciphertext& b, const RelinKey* rlk, bool auto_relin,
                            bool auto_rescale) const {
    if (auto_rescale) {
        require(a.level >= 1 && b.level >= 1, ErrorCode::LevelExhausted, "multiplication needs a level to rescale into");
    }
    Ciphertext out = multiply(a, b);
    if (auto_relin) {
        require(rlk != nullptr, ErrorCode::MissingKey, "relinearization key is not available");
        out = relinearize(out, *rlk);
    }
    if (auto_rescale) {
        out = rescale(out);
    }
    return out;
}

}  // namespace hets
