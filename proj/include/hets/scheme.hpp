// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hets/prng.hpp"
#include "hets/ring.hpp"

namespace hets {

/// Relative tolerance under which two scales count as equal.
inline constexpr double kScaleTolerance = 0x1.0p-30;

/// Parameters of the approximate-arithmetic scheme.
///
/// ring.primes lists the modulus chain q_0 .. q_{L-2} followed by the
/// key-switching prime P. Ciphertexts live on a prefix of the chain; a fresh
/// ciphertext has level L-2 and every rescale drops the last active chain prime,
/// so an L-prime parameter set supports L-2 rescaled multiplications.
struct SchemeParams {
    std::string name = "custom";
    RingParams ring;
    double scale = 0.0;
    std::string security_note;

    std::size_t slot_count() const { return ring.degree / 2; }
    std::size_t chain_length() const { return ring.primes.size(); }
    std::size_t data_prime_count() const { return ring.primes.size() - 1; }
    int top_level() const { return static_cast<int>(data_prime_count()) - 1; }
    uint64_t special_prime() const { return ring.primes.back(); }

    /// Throws InvalidParams with a readable reason.
    void validate() const;

    bool operator==(const SchemeParams& other) const {
        return ring == other.ring && scale == other.scale;
    }
};

/// Builds a parameter set from prime bit sizes. The first and last sizes give the
/// base prime q_0 and the key-switching prime; the middle sizes are rescaling
/// primes, searched from max(2^(bits-1), scale + 1) so that each exceeds the
/// scale while staying as close to it as the NTT constraint allows.
SchemeParams make_params(std::string name, std::size_t degree, std::span<const int> bit_sizes, double scale,
                         std::string security_note = "unspecified");

/// Named presets: "mnist-8192" and "test-4096".
SchemeParams profile_params(const std::string& name);
std::vector<std::string> profile_names();

struct Plaintext {
    RingPoly poly;  // evaluation domain, primes q_0..q_level
    double scale = 1.0;
    int level = 0;
};

struct Ciphertext {
    std::vector<RingPoly> parts;  // evaluation domain, primes q_0..q_level
    double scale = 1.0;
    int level = 0;

    std::size_t size() const { return parts.size(); }
    bool operator==(const Ciphertext& other) const {
        return level == other.level && scale == other.scale && parts == other.parts;
    }
};

struct SecretKey {
    std::vector<int64_t> coeffs;  // ternary
    RingPoly s;                   // evaluation domain over every prime
};

struct PublicKey {
    RingPoly b;  // -a*s + e, evaluation domain over the chain primes
    RingPoly a;
};

/// Key-switching material from some s' to s. Each chain prime's residue digit is
/// split into pieces of digit_bits bits; piece (i, j) encrypts P * 2^(j*w) * s'
/// on residue row i only. The uniform halves are regenerated from the seed.
struct KeySwitchKey {
    uint64_t seed = 0;
    std::vector<std::vector<RingPoly>> b;
    std::vector<std::vector<RingPoly>> a;

    bool operator==(const KeySwitchKey& other) const { return seed == other.seed && b == other.b; }
};

struct RelinKey {
    KeySwitchKey key;
};

struct GaloisKeys {
    std::vector<int> steps;                 // as requested
    std::map<std::size_t, KeySwitchKey> keys;  // by normalized left-rotation step

    bool has(std::size_t normalized_step) const { return keys.count(normalized_step) != 0; }
};

struct KeyBundle {
    SecretKey secret;
    PublicKey public_key;
    RelinKey relin;
    GaloisKeys galois;
};

/// Precomputed runtime of one parameter set. Immutable; every operation is a pure
/// function of its inputs. Row-level work fans out through parallel_for.
class Scheme {
public:
    explicit Scheme(SchemeParams params);

    const SchemeParams& params() const { return params_; }
    const RingContextPtr& ring() const { return ring_; }
    std::size_t degree() const { return params_.ring.degree; }
    std::size_t slot_count() const { return params_.slot_count(); }
    int top_level() const { return params_.top_level(); }
    uint64_t chain_prime(int level) const { return params_.ring.primes[static_cast<std::size_t>(level)]; }
    std::size_t special_prime_id() const { return params_.ring.primes.size() - 1; }
    int digit_bits() const { return digit_bits_; }
    std::size_t pieces_for(std::size_t chain_index) const;

    /// log2 of q_0 * ... * q_level.
    double log_modulus(int level) const;
    std::vector<std::size_t> level_primes(int level) const;

    // Slot encoding. Slot j holds the evaluation at zeta^(5^j), so the Galois
    // element 5^k rotates slots left by k.
    Plaintext encode(std::span<const double> values, int level, double scale) const;
    std::vector<double> decode(const Plaintext& pt) const;

    SecretKey generate_secret_key(Prng& rng) const;
    PublicKey generate_public_key(const SecretKey& sk, Prng& rng) const;
    RelinKey generate_relin_key(const SecretKey& sk, Prng& rng) const;
    GaloisKeys generate_galois_keys(const SecretKey& sk, std::span<const int> steps, Prng& rng) const;
    /// Regenerates the uniform halves of a key-switching key from its seed.
    void expand_key(KeySwitchKey& key) const;

    Ciphertext encrypt(const Plaintext& pt, const PublicKey& pk, Prng& rng) const;
    /// Secret-key encryption (c1 uniform); its noise is a single error term.
    Ciphertext encrypt_symmetric(const Plaintext& pt, const SecretKey& sk, Prng& rng) const;
    Plaintext decrypt(const Ciphertext& ct, const SecretKey& sk) const;

    Ciphertext add(const Ciphertext& a, const Ciphertext& b) const;
    Ciphertext sub(const Ciphertext& a, const Ciphertext& b) const;
    Ciphertext negate(const Ciphertext& a) const;
    Ciphertext add_plain(const Ciphertext& a, const Plaintext& b) const;
    Ciphertext sub_plain(const Ciphertext& a, const Plaintext& b) const;
    /// Tensor product; size-2 inputs give a size-3 output with scale a.scale * b.scale.
    Ciphertext multiply(const Ciphertext& a, const Ciphertext& b) const;
    Ciphertext multiply_plain(const Ciphertext& a, const Plaintext& b) const;
    Ciphertext relinearize(const Ciphertext& a, const RelinKey& rlk) const;
    Ciphertext rescale(const Ciphertext& a) const;
    /// Drops chain primes without changing the scale.
    Ciphertext mod_drop(const Ciphertext& a, int level) const;

    /// Normalized left-rotation step in [0, slots).
    std::size_t normalize_step(long long step) const;
    std::size_t galois_element(std::size_t normalized_step) const;
    /// Key-switch sequence realizing a rotation: the exact key when present,
    /// otherwise the binary decomposition into power-of-two keys. Empty for the
    /// identity; nullopt when some needed key is absent.
    std::optional<std::vector<std::size_t>> rotation_plan(long long step, const GaloisKeys& gk) const;
    std::optional<std::vector<std::size_t>> rotation_plan(long long step,
                                                          const std::vector<std::size_t>& available) const;
    Ciphertext rotate(const Ciphertext& a, long long step, const GaloisKeys& gk) const;
    /// One automorphism plus key switch with the key for normalized_step.
    Ciphertext rotate_single(const Ciphertext& a, std::size_t normalized_step, const KeySwitchKey& key) const;

    /// a * b, relinearized and rescaled as requested.
    Ciphertext eval_mul(const Ciphertext& a, const Ciphertext& b, const RelinKey* rlk, bool auto_relin,
                        bool auto_rescale) const;

    // Contract checks shared with the backend layer.
    void check_same_level(int a, int b) const;
    void check_same_scale(double a, double b) const;
    void check_product_scale(int level, double a, double b) const;

private:
    void special_fft(std::vector<std::complex<double>>& vals) const;
    void special_fft_inverse(std::vector<std::complex<double>>& vals) const;
    KeySwitchKey make_switch_key(const RingPoly& target, const SecretKey& sk, Prng& rng) const;
    /// Returns (u0, u1) at primes q_0..q_level with u0 + u1*s ~ c*s'.
    std::pair<RingPoly, RingPoly> key_switch(const RingPoly& c_coeff, const KeySwitchKey& key) const;
    RingPoly rescale_poly(const RingPoly& p) const;

    SchemeParams params_;
    RingContextPtr ring_;
    int digit_bits_ = 0;
    std::vector<std::size_t> rot_group_;
    std::vector<std::complex<double>> ksi_pows_;
};

using SchemePtr = std::shared_ptr<const Scheme>;

/// Secret, public, relinearization and Galois keys for the requested steps.
/// Steps must be nonzero with |step| < slot_count (InvalidRotationStep).
KeyBundle keygen(const Scheme& scheme, std::span<const int> rotation_steps, Prng& rng);

}  // namespace hets
