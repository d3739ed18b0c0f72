// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hets/scheme.hpp"

namespace hets {

struct ContextFlags {
    bool auto_rescale = true;
    bool auto_relin = true;
    std::size_t workers = 1;
};

struct ContextOptions {
    /// Rotation keys to generate. Empty means all +-2^k below the slot count.
    std::vector<int> rotation_steps;
    /// Extra steps for a known workload (merged into the set above).
    std::vector<int> workload_steps;
    std::optional<uint64_t> seed;
    ContextFlags flags;
};

/// All +-2^k with 2^k < slots.
std::vector<int> default_rotation_steps(std::size_t slots);

/// 64-bit digest of degree, primes and scale.
uint64_t params_fingerprint(const SchemeParams& params);

/// Parameters plus keys plus evaluation flags. Immutable; the modifiers return
/// updated copies sharing the key material.
class Context {
public:
    static Context create(const SchemeParams& params, const ContextOptions& options = {});
    static Context create(const std::string& profile, const ContextOptions& options = {});
    /// Key inventory without key material; usable by the mock backend only.
    static Context structural(const SchemeParams& params, const ContextOptions& options = {});
    /// Evaluation-only context assembled from deserialized parts. The key
    /// polynomials must live on scheme->ring().
    static Context from_public_parts(SchemePtr scheme, PublicKey pk, std::optional<RelinKey> rlk, GaloisKeys gk,
                                     ContextFlags flags = {});
    /// Private context assembled from deserialized parts.
    static Context from_private_parts(SchemePtr scheme, SecretKey sk, PublicKey pk, std::optional<RelinKey> rlk,
                                      GaloisKeys gk, ContextFlags flags = {});

    Context make_public() const;
    Context with_flags(bool auto_rescale, bool auto_relin, std::size_t workers) const;

    const SchemePtr& scheme() const { return scheme_; }
    const SchemeParams& params() const { return scheme_->params(); }
    std::size_t slot_count() const { return scheme_->slot_count(); }
    const ContextFlags& flags() const { return flags_; }
    uint64_t fingerprint() const { return fingerprint_; }

    bool is_structural() const { return structural_; }
    bool has_secret_key() const { return has_secret_; }
    bool is_private() const { return has_secret_; }
    bool has_public_key() const { return structural_ || public_ != nullptr; }
    bool has_relin_key() const { return structural_ || relin_ != nullptr; }
    /// Sorted normalized left-rotation steps with a Galois key.
    const std::vector<std::size_t>& galois_steps() const { return galois_steps_; }
    const std::vector<int>& requested_steps() const { return requested_steps_; }

    // Key material; MissingKey when absent.
    const SecretKey& secret_key() const;
    const PublicKey& public_key() const;
    const RelinKey& relin_key() const;
    const GaloisKeys& galois_keys() const;

private:
    Context() = default;
    void index_galois_steps(const std::vector<int>& steps);

    SchemePtr scheme_;
    ContextFlags flags_;
    uint64_t fingerprint_ = 0;
    bool structural_ = false;
    bool has_secret_ = false;
    std::shared_ptr<const SecretKey> secret_;
    std::shared_ptr<const PublicKey> public_;
    std::shared_ptr<const RelinKey> relin_;
    std::shared_ptr<const GaloisKeys> galois_;
    std::vector<std::size_t> galois_steps_;
    std::vector<int> requested_steps_;
};

}  // namespace hets
