// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "hets/modarith.hpp"
#include "hets/prng.hpp"

namespace hets {

/// Ring dimension and RNS prime list for Z_q[x]/(x^N + 1).
struct RingParams {
    std::size_t degree = 0;
    std::vector<uint64_t> primes;

    /// Throws InvalidParams unless N is a power of two >= 16 and every prime is a
    /// distinct odd prime below 2^61 with p = 1 (mod 2N).
    void validate() const;

    bool operator==(const RingParams&) const = default;
};

/// Smallest prime p >= at_least with p = 1 (mod 2N) that is not listed in exclude.
uint64_t next_ntt_prime(std::size_t degree, uint64_t at_least, std::span<const uint64_t> exclude = {});

/// Per-prime tables for the negacyclic NTT (bit-reversed powers of a primitive
/// 2N-th root of unity).
struct NttTables {
    Modulus modulus;
    uint64_t root = 0;  // primitive 2N-th root
    std::vector<ShoupConstant> root_powers;      // psi^bitrev(i)
    std::vector<ShoupConstant> inv_root_powers;  // psi^-bitrev(i)
    ShoupConstant inv_degree;
};

/// Immutable precomputation shared by every polynomial of one parameter set.
class RingContext {
public:
    explicit RingContext(RingParams params);

    const RingParams& params() const { return params_; }
    std::size_t degree() const { return params_.degree; }
    int log_degree() const { return log_degree_; }
    std::size_t prime_count() const { return tables_.size(); }
    const Modulus& modulus(std::size_t prime_id) const { return tables_[prime_id].modulus; }
    const NttTables& tables(std::size_t prime_id) const { return tables_[prime_id]; }

    void forward_ntt(std::span<uint64_t> row, std::size_t prime_id) const;
    void inverse_ntt(std::span<uint64_t> row, std::size_t prime_id) const;

private:
    RingParams params_;
    int log_degree_ = 0;
    std::vector<NttTables> tables_;
};

using RingContextPtr = std::shared_ptr<const RingContext>;

enum class Domain : uint8_t { Coefficient = 0, Evaluation = 1 };
enum class NttDirection { Forward, Inverse };
enum class SampleKind { Ternary, Error, Uniform };

/// Standard deviation of the error distribution (centered binomial, 21 coin pairs).
inline constexpr double kErrorStdDev = 3.2;
inline constexpr int kErrorBinomialPairs = 21;
inline constexpr int kErrorClamp = 19;  // floor(6 * sigma)

/// An element of R_q held as one residue row per active prime. The active primes
/// are an ordered subset of the context's prime table (a modulus-chain prefix,
/// optionally followed by the key-switching prime).
class RingPoly {
public:
    RingPoly() = default;
    /// Zero polynomial.
    RingPoly(RingContextPtr ctx, std::vector<std::size_t> prime_ids, Domain domain);

    /// Coefficient-domain polynomial from signed integer coefficients (length N).
    static RingPoly from_signed(RingContextPtr ctx, std::vector<std::size_t> prime_ids,
                                std::span<const int64_t> coeffs);

    const RingContextPtr& context() const { return ctx_; }
    std::size_t degree() const { return ctx_ ? ctx_->degree() : 0; }
    std::size_t prime_count() const { return prime_ids_.size(); }
    const std::vector<std::size_t>& prime_ids() const { return prime_ids_; }
    std::size_t prime_id(std::size_t row) const { return prime_ids_[row]; }
    const Modulus& modulus(std::size_t row) const { return ctx_->modulus(prime_ids_[row]); }
    Domain domain() const { return domain_; }
    bool empty() const { return !ctx_; }

    std::span<uint64_t> row(std::size_t k) { return {data_.data() + k * degree(), degree()}; }
    std::span<const uint64_t> row(std::size_t k) const { return {data_.data() + k * degree(), degree()}; }
    std::span<const uint64_t> data() const { return data_; }

    /// Same context, same prime list, same domain.
    bool compatible(const RingPoly& other) const;

    // In-place kernels used by the scheme layer. Preconditions are checked and
    // raise ParamMismatch / DomainMismatch like the pure operations.
    void ntt_inplace();
    void intt_inplace();
    void add_inplace(const RingPoly& other);
    void sub_inplace(const RingPoly& other);
    void negate_inplace();
    void mul_pointwise_inplace(const RingPoly& other);
    void mul_scalar_inplace(std::span<const uint64_t> per_row_scalar);

    /// Copy restricted to the given prime ids (each must be active here).
    RingPoly select_primes(const std::vector<std::size_t>& ids) const;

    bool operator==(const RingPoly& other) const;

private:
    RingContextPtr ctx_;
    std::vector<std::size_t> prime_ids_;
    Domain domain_ = Domain::Coefficient;
    std::vector<uint64_t> data_;
};

RingPoly ntt_transform(const RingPoly& p, NttDirection direction);
RingPoly poly_add(const RingPoly& a, const RingPoly& b);
RingPoly poly_sub(const RingPoly& a, const RingPoly& b);
RingPoly poly_negate(const RingPoly& a);

/// Negacyclic product. Coefficient-domain operands are transformed internally;
/// the result is always in the evaluation domain.
RingPoly poly_mul(const RingPoly& a, const RingPoly& b);

/// Divides by the last active prime with rounding and drops it. Coefficient
/// domain only; raises LevelExhausted when a single prime remains.
RingPoly drop_last_prime(const RingPoly& p);

/// Coefficient-domain sample. Ternary and error samples share one signed draw
/// across all rows; uniform samples are independent per prime.
RingPoly sample_poly(const RingContextPtr& ctx, const std::vector<std::size_t>& prime_ids, SampleKind kind, Prng& rng);

/// Signed coefficients of a ternary or error sample (helper for the scheme's
/// secret key).
std::vector<int64_t> sample_signed(std::size_t degree, SampleKind kind, Prng& rng);

/// Applies x -> x^galois_element (odd, < 2N) in the coefficient domain.
RingPoly apply_automorphism(const RingPoly& p, std::size_t galois_element);

}  // namespace hets
