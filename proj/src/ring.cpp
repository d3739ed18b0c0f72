// SPDX-License-Identifier: Apache-2.0
#include "hets/ring.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "hets/error.hpp"
#include "hets/parallel.hpp"

namespace hets {

namespace {

std::size_t bit_reverse(std::size_t x, int bits) {
    std::size_t r = 0;
    for (int i = 0; i < bits; ++i) {
        r = (r << 1) | ((x >> i) & 1);
    }
    return r;
}

uint64_t find_primitive_root(const Modulus& m, std::size_t degree) {
    const uint64_t p = m.value();
    const uint64_t order = 2 * degree;
    for (uint64_t g = 2; g < p; ++g) {
        const uint64_t candidate = m.pow(g, (p - 1) / order);
        // candidate has order dividing 2N; it is primitive iff candidate^N = -1.
        if (m.pow(candidate, degree) == p - 1) {
            return candidate;
        }
    }
    fail(ErrorCode::InvalidParams, "no primitive 2N-th root modulo " + std::to_string(p));
}

void check_compatible(const RingPoly& a, const RingPoly& b) {
    require(a.context() == b.context() && a.prime_ids() == b.prime_ids(), ErrorCode::ParamMismatch,
            "ring polynomials use different parameters or prime lists");
    require(a.domain() == b.domain(), ErrorCode::DomainMismatch, "ring polynomials are in different domains");
}

}  // namespace

void RingParams::validate() const {
    require(degree >= 2 && std::has_single_bit(degree), ErrorCode::InvalidParams,
            "ring degree must be a power of two, got " + std::to_string(degree));
    require(!primes.empty(), ErrorCode::InvalidParams, "prime list is empty");
    for (std::size_t i = 0; i < primes.size(); ++i) {
        const uint64_t p = primes[i];
        require(p < (uint64_t{1} << 61), ErrorCode::InvalidParams, "prime " + std::to_string(p) + " exceeds 61 bits");
        require(p % (2 * degree) == 1, ErrorCode::InvalidParams,
                "prime " + std::to_string(p) + " is not 1 mod 2N");
        require(is_prime(p), ErrorCode::InvalidParams, std::to_string(p) + " is not prime");
        for (std::size_t j = 0; j < i; ++j) {
            require(primes[j] != p, ErrorCode::InvalidParams, "duplicate prime " + std::to_string(p));
        }
    }
}

uint64_t next_ntt_prime(std::size_t degree, uint64_t at_least, std::span<const uint64_t> exclude) {
    const uint64_t step = 2 * degree;
    uint64_t candidate = at_least <= 1 ? step + 1 : ((at_least - 1 + step - 1) / step) * step + 1;
    for (;; candidate += step) {
        if (candidate >= (uint64_t{1} << 61)) {
            fail(ErrorCode::InvalidParams, "prime search exceeded 61 bits");
        }
        if (is_prime(candidate) && std::find(exclude.begin(), exclude.end(), candidate) == exclude.end()) {
            return candidate;
        }
    }
}

RingContext::RingContext(RingParams params) : params_(std::move(params)) {
    params_.validate();
    const std::size_t n = params_.degree;
    log_degree_ = std::countr_zero(n);
    tables_.reserve(params_.primes.size());
    for (uint64_t p : params_.primes) {
        NttTables t;
        t.modulus = Modulus(p);
        t.root = find_primitive_root(t.modulus, n);
        const uint64_t inv_root = t.modulus.inv(t.root);
        t.root_powers.resize(n);
        t.inv_root_powers.resize(n);
        std::vector<uint64_t> powers(n), inv_powers(n);
        powers[0] = inv_powers[0] = 1;
        for (std::size_t i = 1; i < n; ++i) {
            powers[i] = t.modulus.mul(powers[i - 1], t.root);
            inv_powers[i] = t.modulus.mul(inv_powers[i - 1], inv_root);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t r = bit_reverse(i, log_degree_);
            t.root_powers[i] = ShoupConstant(powers[r], t.modulus);
            t.inv_root_powers[i] = ShoupConstant(inv_powers[r], t.modulus);
        }
        t.inv_degree = ShoupConstant(t.modulus.inv(n % p), t.modulus);
        tables_.push_back(std::move(t));
    }
}

void RingContext::forward_ntt(std::span<uint64_t> a, std::size_t prime_id) const {
    const NttTables& t = tables_[prime_id];
    const uint64_t p = t.modulus.value();
    const std::size_t n = a.size();
    std::size_t gap = n;
    for (std::size_t m = 1; m < n; m <<= 1) {
        gap >>= 1;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j1 = 2 * i * gap;
            const ShoupConstant& w = t.root_powers[m + i];
            for (std::size_t j = j1; j < j1 + gap; ++j) {
                const uint64_t u = a[j];
                const uint64_t v = w.mul(a[j + gap], p);
                a[j] = add_mod(u, v, p);
                a[j + gap] = sub_mod(u, v, p);
            }
        }
    }
}

void RingContext::inverse_ntt(std::span<uint64_t> a, std::size_t prime_id) const {
    const NttTables& t = tables_[prime_id];
    const uint64_t p = t.modulus.value();
    const std::size_t n = a.size();
    std::size_t gap = 1;
    for (std::size_t m = n; m > 1; m >>= 1) {
        const std::size_t half = m >> 1;
        std::size_t j1 = 0;
        for (std::size_t i = 0; i < half; ++i) {
            const ShoupConstant& w = t.inv_root_powers[half + i];
            for (std::size_t j = j1; j < j1 + gap; ++j) {
                const uint64_t u = a[j];
                const uint64_t v = a[j + gap];
                a[j] = add_mod(u, v, p);
                a[j + gap] = w.mul(sub_mod(u, v, p), p);
            }
            j1 += 2 * gap;
        }
        gap <<= 1;
    }
    for (auto& x : a) {
        x = t.inv_degree.mul(x, p);
    }
}

RingPoly::RingPoly(RingContextPtr ctx, std::vector<std::size_t> prime_ids, Domain domain)
    : ctx_(std::move(ctx)), prime_ids_(std::move(prime_ids)), domain_(domain) {
    for (std::size_t id : prime_ids_) {
        require(id < ctx_->prime_count(), ErrorCode::ParamMismatch, "prime id out of range");
    }
    data_.assign(prime_ids_.size() * ctx_->degree(), 0);
}

RingPoly RingPoly::from_signed(RingContextPtr ctx, std::vector<std::size_t> prime_ids, std::span<const int64_t> coeffs) {
    RingPoly out(std::move(ctx), std::move(prime_ids), Domain::Coefficient);
    require(coeffs.size() == out.degree(), ErrorCode::ParamMismatch, "coefficient count does not match ring degree");
    for (std::size_t k = 0; k < out.prime_count(); ++k) {
        const Modulus& m = out.modulus(k);
        auto r = out.row(k);
        for (std::size_t i = 0; i < coeffs.size(); ++i) {
            r[i] = m.from_signed(coeffs[i]);
        }
    }
    return out;
}

bool RingPoly::compatible(const RingPoly& other) const {
    return ctx_ == other.ctx_ && prime_ids_ == other.prime_ids_ && domain_ == other.domain_;
}

bool RingPoly::operator==(const RingPoly& other) const {
    return compatible(other) && data_ == other.data_;
}

void RingPoly::ntt_inplace() {
    require(domain_ == Domain::Coefficient, ErrorCode::DomainMismatch, "forward NTT needs a coefficient-domain input");
    parallel_for(prime_count(), [&](std::size_t k) { ctx_->forward_ntt(row(k), prime_ids_[k]); });
    domain_ = Domain::Evaluation;
}

void RingPoly::intt_inplace() {
    require(domain_ == Domain::Evaluation, ErrorCode::DomainMismatch, "inverse NTT needs an evaluation-domain input");
    parallel_for(prime_count(), [&](std::size_t k) { ctx_->inverse_ntt(row(k), prime_ids_[k]); });
    domain_ = Domain::Coefficient;
}

void RingPoly::add_inplace(const RingPoly& other) {
    check_compatible(*this, other);
    for (std::size_t k = 0; k < prime_count(); ++k) {
        const Modulus& m = modulus(k);
        auto a = row(k);
        auto b = other.row(k);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = m.add(a[i], b[i]);
        }
    }
}

void RingPoly::sub_inplace(const RingPoly& other) {
    check_compatible(*this, other);
    for (std::size_t k = 0; k < prime_count(); ++k) {
        const Modulus& m = modulus(k);
        auto a = row(k);
        auto b = other.row(k);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = m.sub(a[i], b[i]);
        }
    }
}

void RingPoly::negate_inplace() {
    for (std::size_t k = 0; k < prime_count(); ++k) {
        const Modulus& m = modulus(k);
        for (auto& x : row(k)) {
            x = m.neg(x);
        }
    }
}

void RingPoly::mul_pointwise_inplace(const RingPoly& other) {
    check_compatible(*this, other);
    require(domain_ == Domain::Evaluation, ErrorCode::DomainMismatch, "pointwise product needs evaluation domain");
    for (std::size_t k = 0; k < prime_count(); ++k) {
        const Modulus& m = modulus(k);
        auto a = row(k);
        auto b = other.row(k);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = m.mul(a[i], b[i]);
        }
    }
}

void RingPoly::mul_scalar_inplace(std::span<const uint64_t> per_row_scalar) {
    require(per_row_scalar.size() == prime_count(), ErrorCode::ParamMismatch, "scalar count does not match prime count");
    for (std::size_t k = 0; k < prime_count(); ++k) {
        const Modulus& m = modulus(k);
        const ShoupConstant s(m.reduce(per_row_scalar[k]), m);
        for (auto& x : row(k)) {
            x = s.mul(x, m.value());
        }
    }
}

RingPoly RingPoly::select_primes(const std::vector<std::size_t>& ids) const {
    RingPoly out(ctx_, ids, domain_);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto it = std::find(prime_ids_.begin(), prime_ids_.end(), ids[k]);
        require(it != prime_ids_.end(), ErrorCode::ParamMismatch, "requested prime is not active");
        auto src = row(static_cast<std::size_t>(it - prime_ids_.begin()));
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

RingPoly ntt_transform(const RingPoly& p, NttDirection direction) {
    RingPoly out = p;
    if (direction == NttDirection::Forward) {
        out.ntt_inplace();
    } else {
        out.intt_inplace();
    }
    return out;
}

RingPoly poly_add(const RingPoly& a, const RingPoly& b) {
    RingPoly out = a;
    out.add_inplace(b);
    return out;
}

RingPoly poly_sub(const RingPoly& a, const RingPoly& b) {
    RingPoly out = a;
    out.sub_inplace(b);
    return out;
}

RingPoly poly_negate(const RingPoly& a) {
    RingPoly out = a;
    out.negate_inplace();
    return out;
}

RingPoly poly_mul(const RingPoly& a, const RingPoly& b) {
    require(a.context() == b.context() && a.prime_ids() == b.prime_ids(), ErrorCode::ParamMismatch,
            "ring polynomials use different parameters or prime lists");
    RingPoly x = a.domain() == Domain::Evaluation ? a : ntt_transform(a, NttDirection::Forward);
    if (b.domain() == Domain::Evaluation) {
        x.mul_pointwise_inplace(b);
    } else {
        x.mul_pointwise_inplace(ntt_transform(b, NttDirection::Forward));
    }
    return x;
}

RingPoly drop_last_prime(const RingPoly& p) {
    require(p.domain() == Domain::Coefficient, ErrorCode::DomainMismatch, "drop_last_prime needs coefficient domain");
    require(p.prime_count() >= 2, ErrorCode::LevelExhausted, "cannot drop the only remaining prime");
    const std::size_t last = p.prime_count() - 1;
    const Modulus& q_last = p.modulus(last);
    std::vector<std::size_t> kept(p.prime_ids().begin(), p.prime_ids().end() - 1);
    RingPoly out(p.context(), kept, Domain::Coefficient);
    auto last_row = p.row(last);
    parallel_for(last, [&](std::size_t k) {
        const Modulus& m = p.modulus(k);
        const uint64_t inv = m.inv(m.reduce(q_last.value()));
        const ShoupConstant inv_c(inv, m);
        auto src = p.row(k);
        auto dst = out.row(k);
        for (std::size_t i = 0; i < src.size(); ++i) {
            // x - r with r the centered residue mod q_last is an exact multiple of q_last.
            const uint64_t r = m.from_signed(q_last.centered(last_row[i]));
            dst[i] = inv_c.mul(m.sub(src[i], r), m.value());
        }
    });
    return out;
}

std::vector<int64_t> sample_signed(std::size_t degree, SampleKind kind, Prng& rng) {
    std::vector<int64_t> v(degree);
    constexpr uint64_t mask = (uint64_t{1} << kErrorBinomialPairs) - 1;
    for (auto& x : v) {
        if (kind == SampleKind::Ternary) {
            x = static_cast<int64_t>(rng.uniform_below(3)) - 1;
        } else {
            const uint64_t bits = rng.next_u64();
            const int a = std::popcount(bits & mask);
            const int b = std::popcount((bits >> kErrorBinomialPairs) & mask);
            x = std::clamp(a - b, -kErrorClamp, kErrorClamp);
        }
    }
    return v;
}

RingPoly sample_poly(const RingContextPtr& ctx, const std::vector<std::size_t>& prime_ids, SampleKind kind, Prng& rng) {
    if (kind != SampleKind::Uniform) {
        const auto coeffs = sample_signed(ctx->degree(), kind, rng);
        return RingPoly::from_signed(ctx, prime_ids, coeffs);
    }
    RingPoly out(ctx, prime_ids, Domain::Coefficient);
    for (std::size_t k = 0; k < out.prime_count(); ++k) {
        const uint64_t p = out.modulus(k).value();
        for (auto& x : out.row(k)) {
            x = rng.uniform_below(p);
        }
    }
    return out;
}

RingPoly apply_automorphism(const RingPoly& p, std::size_t galois_element) {
    require(p.domain() == Domain::Coefficient, ErrorCode::DomainMismatch, "automorphism needs coefficient domain");
    const std::size_t n = p.degree();
    const std::size_t mask = 2 * n - 1;
    require(galois_element % 2 == 1 && galois_element < 2 * n, ErrorCode::InvalidParams, "invalid Galois element");
    RingPoly out(p.context(), p.prime_ids(), Domain::Coefficient);
    for (std::size_t k = 0; k < p.prime_count(); ++k) {
        const Modulus& m = p.modulus(k);
        auto src = p.row(k);
        auto dst = out.row(k);
        std::size_t index = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (index < n) {
                dst[index] = src[i];
            } else {
                dst[index - n] = m.neg(src[i]);
            }
            index = (index + galois_element) & mask;
        }
    }
    return out;
}

}  // namespace hets
