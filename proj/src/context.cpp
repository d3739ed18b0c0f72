// SPDX-License-Identifier: Apache-2.0
#include "hets/context.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <random>
#include <set>

#include "hets/error.hpp"

namespace hets {

namespace {

void check_flags(const ContextFlags& flags) {
    require(flags.workers >= 1, ErrorCode::InvalidWorkerCount, "worker count must be at least 1");
}

std::vector<int> merged_steps(std::size_t slots, const ContextOptions& options) {
    std::vector<int> steps = options.rotation_steps.empty() ? default_rotation_steps(slots) : options.rotation_steps;
    steps.insert(steps.end(), options.workload_steps.begin(), options.workload_steps.end());
    std::vector<int> out;
    std::set<int> seen;
    for (int s : steps) {
        if (seen.insert(s).second) {
            out.push_back(s);
        }
    }
    return out;
}

}  // namespace

std::vector<int> default_rotation_steps(std::size_t slots) {
    std::vector<int> steps;
    for (std::size_t k = 1; k < slots; k <<= 1) {
        steps.push_back(static_cast<int>(k));
        steps.push_back(-static_cast<int>(k));
    }
    return steps;
}

uint64_t params_fingerprint(const SchemeParams& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mix(params.ring.degree);
    mix(params.ring.primes.size());
    for (auto q : params.ring.primes) {
        mix(q);
    }
    mix(std::bit_cast<uint64_t>(params.scale));
    return h;
}

void Context::index_galois_steps(const std::vector<int>& steps) {
    requested_steps_ = steps;
    std::set<std::size_t> normalized;
    for (int s : steps) {
        require(s != 0 && static_cast<std::size_t>(std::abs(s)) < slot_count(), ErrorCode::InvalidRotationStep,
                "rotation step " + std::to_string(s) + " is out of range");
        normalized.insert(scheme_->normalize_step(s));
    }
    galois_steps_.assign(normalized.begin(), normalized.end());
}

Context Context::create(const SchemeParams& params, const ContextOptions& options) {
    check_flags(options.flags);
    Context ctx;
    ctx.scheme_ = std::make_shared<const Scheme>(params);
    ctx.flags_ = options.flags;
    ctx.fingerprint_ = params_fingerprint(params);
    const auto steps = merged_steps(ctx.slot_count(), options);
    ctx.index_galois_steps(steps);
    Prng rng(options.seed.value_or(std::random_device{}()));
    KeyBundle keys = keygen(*ctx.scheme_, steps, rng);
    ctx.has_secret_ = true;
    ctx.secret_ = std::make_shared<const SecretKey>(std::move(keys.secret));
    ctx.public_ = std::make_shared<const PublicKey>(std::move(keys.public_key));
    ctx.relin_ = std::make_shared<const RelinKey>(std::move(keys.relin));
    ctx.galois_ = std::make_shared<const GaloisKeys>(std::move(keys.galois));
    return ctx;
}

Context Context::create(const std::string& profile, const ContextOptions& options) {
    return create(profile_params(profile), options);
}

Context Context::structural(const SchemeParams& params, const ContextOptions& options) {
    check_flags(options.flags);
    Context ctx;
    ctx.scheme_ = std::make_shared<const Scheme>(params);
    ctx.flags_ = options.flags;
    ctx.fingerprint_ = params_fingerprint(params);
    ctx.structural_ = true;
    ctx.has_secret_ = true;
    ctx.index_galois_steps(merged_steps(ctx.slot_count(), options));
    return ctx;
}

Context Context::from_public_parts(SchemePtr scheme, PublicKey pk, std::optional<RelinKey> rlk, GaloisKeys gk,
                                   ContextFlags flags) {
    check_flags(flags);
    require(scheme != nullptr, ErrorCode::InvalidParams, "missing scheme");
    Context ctx;
    ctx.scheme_ = std::move(scheme);
    ctx.flags_ = flags;
    ctx.fingerprint_ = params_fingerprint(ctx.scheme_->params());
    ctx.index_galois_steps(gk.steps);
    ctx.public_ = std::make_shared<const PublicKey>(std::move(pk));
    if (rlk) {
        ctx.relin_ = std::make_shared<const RelinKey>(std::move(*rlk));
    }
    ctx.galois_ = std::make_shared<const GaloisKeys>(std::move(gk));
    return ctx;
}

Context Context::from_private_parts(SchemePtr scheme, SecretKey sk, PublicKey pk, std::optional<RelinKey> rlk,
                                    GaloisKeys gk, ContextFlags flags) {
    Context ctx = from_public_parts(std::move(scheme), std::move(pk), std::move(rlk), std::move(gk), flags);
    ctx.has_secret_ = true;
    ctx.secret_ = std::make_shared<const SecretKey>(std::move(sk));
    return ctx;
}

Context Context::make_public() const {
    Context out = *this;
    out.has_secret_ = false;
    out.secret_.reset();
    return out;
}

Context Context::with_flags(bool auto_rescale, bool auto_relin, std::size_t workers) const {
    ContextFlags flags{auto_rescale, auto_relin, workers};
    check_flags(flags);
    Context out = *this;
    out.flags_ = flags;
    return out;
}

const SecretKey& Context::secret_key() const {
    require(secret_ != nullptr, ErrorCode::MissingKey, "context has no secret key");
    return *secret_;
}

const PublicKey& Context::public_key() const {
    require(public_ != nullptr, ErrorCode::MissingKey, "context has no public key material");
    return *public_;
}

const RelinKey& Context::relin_key() const {
    require(relin_ != nullptr, ErrorCode::MissingKey, "context has no relinearization key material");
    return *relin_;
}

const GaloisKeys& Context::galois_keys() const {
    require(galois_ != nullptr, ErrorCode::MissingKey, "context has no Galois key material");
    return *galois_;
}

}  // namespace hets
