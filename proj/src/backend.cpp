// SPDX-License-Identifier: Apache-2.0
#include "hets/backend.hpp"

#include <atomic>
#include <cmath>

#include "hets/parallel.hpp"
#include "hets/trace.hpp"

namespace hets {

namespace {

std::atomic<uint64_t> g_next_backend_id{1};

std::vector<double> padded(std::span<const double> values, std::size_t slots) {
    std::vector<double> out(slots, 0.0);
    std::copy(values.begin(), values.end(), out.begin());
    return out;
}

void check_length(std::span<const double> values, std::size_t slots) {
    require(values.size() <= slots, ErrorCode::TooManyValues,
            std::to_string(values.size()) + " values exceed " + std::to_string(slots) + " slots");
}

}  // namespace

std::string backend_kind_name(BackendKind kind) { return kind == BackendKind::Real ? "real" : "mock"; }

BackendKind parse_backend_kind(const std::string& name) {
    if (name == "real") {
        return BackendKind::Real;
    }
    if (name == "mock") {
        return BackendKind::Mock;
    }
    fail(ErrorCode::InvalidParams, "unknown backend '" + name + "' (expected real or mock)");
}

int Cipher::level() const {
    return std::visit([](const auto& c) { return c.level; }, value_);
}

double Cipher::scale() const {
    return std::visit([](const auto& c) { return c.scale; }, value_);
}

std::size_t Cipher::size() const {
    if (const auto* m = std::get_if<MockCiphertext>(&value_)) {
        return m->size;
    }
    return std::get<Ciphertext>(value_).size();
}

const Ciphertext& Cipher::real() const {
    const auto* ct = std::get_if<Ciphertext>(&value_);
    require(ct != nullptr, ErrorCode::InvalidOperand, "handle holds a mock ciphertext");
    return *ct;
}

const MockCiphertext& Cipher::mock() const {
    const auto* ct = std::get_if<MockCiphertext>(&value_);
    require(ct != nullptr, ErrorCode::InvalidOperand, "handle holds a real ciphertext");
    return *ct;
}

TraceSink TraceRecorder::sink() {
    return [this](const TraceEntry& e) {
        std::lock_guard lock(mutex_);
        entries_.push_back(e);
    };
}

std::vector<TraceEntry> TraceRecorder::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::vector<TraceEntry> TraceRecorder::entries_with_tag(const std::string& tag) const {
    std::lock_guard lock(mutex_);
    std::vector<TraceEntry> out;
    for (const auto& e : entries_) {
        if (e.tag == tag) {
            out.push_back(e);
        }
    }
    return out;
}

void TraceRecorder::clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
}

Backend::Backend(Context ctx, BackendKind kind, uint64_t seed)
    : ctx_(std::move(ctx)), kind_(kind), id_(g_next_backend_id++), rng_(seed) {
    require(kind_ == BackendKind::Mock || !ctx_.is_structural(), ErrorCode::MissingKey,
            "a structural context has no key material for the real backend");
}

void Backend::check_owner(const Cipher& a) const {
    require(a.backend_id() == id_, ErrorCode::BackendMismatch, "operand belongs to another backend instance");
}

void Backend::record(const char* op, long long step, int level, double scale, std::optional<ErrorCode> error) const {
    if (!trace_) {
        return;
    }
    trace_(TraceEntry{current_trace_tag(), op, step, level, static_cast<int>(std::lround(std::log2(scale))), error});
}

template <class F>
Cipher Backend::traced(const char* op, long long step, const Cipher& in, F&& body) const {
    ScopedWorkers workers(inside_parallel_worker() ? 1 : ctx_.flags().workers);
    try {
        Cipher out = body();
        record(op, step, out.level(), out.scale(), std::nullopt);
        return out;
    } catch (const Error& e) {
        record(op, step, in.level(), in.scale(), e.code());
        throw;
    }
}

double Backend::lazy_plain_scale(const Cipher& a) const {
    return static_cast<double>(scheme().chain_prime(a.level())) * default_scale() / a.scale();
}

Plaintext Backend::encode_for(std::span<const double> values, int level, double scale) const {
    return scheme().encode(values, level, scale);
}

Cipher Backend::encrypt(std::span<const double> values) { return encrypt_at(values, top_level(), default_scale()); }

Cipher Backend::encrypt_at(std::span<const double> values, int level, double scale) {
    const Cipher meta(MockCiphertext{{}, level, scale, 2}, id_);
    return traced("encrypt", 0, meta, [&] {
        check_length(values, slot_count());
        require(level >= 0 && level <= top_level(), ErrorCode::LevelMismatch, "invalid encryption level");
        require(ctx_.has_public_key(), ErrorCode::MissingKey, "context has no public key");
        if (kind_ == BackendKind::Mock) {
            return Cipher(MockCiphertext{padded(values, slot_count()), level, scale, 2}, id_);
        }
        const Plaintext pt = encode_for(values, level, scale);
        std::lock_guard lock(rng_mutex_);
        if (ctx_.has_secret_key()) {
            return Cipher(scheme().encrypt_symmetric(pt, ctx_.secret_key(), rng_), id_);
        }
        return Cipher(scheme().encrypt(pt, ctx_.public_key(), rng_), id_);
    });
}

std::vector<double> Backend::decrypt(const Cipher& a) const {
    check_owner(a);
    require(ctx_.has_secret_key(), ErrorCode::MissingKey, "decryption needs the secret key");
    if (kind_ == BackendKind::Mock) {
        return a.mock().slots;
    }
    ScopedWorkers workers(inside_parallel_worker() ? 1 : ctx_.flags().workers);
    return scheme().decode(scheme().decrypt(a.real(), ctx_.secret_key()));
}

Cipher Backend::add(const Cipher& a, const Cipher& b) const {
    return traced("add", 0, a, [&] {
        check_owner(a);
        check_owner(b);
        scheme().check_same_level(a.level(), b.level());
        scheme().check_same_scale(a.scale(), b.scale());
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().add(a.real(), b.real()), id_);
        }
        MockCiphertext out = a.mock();
        const auto& other = b.mock().slots;
        for (std::size_t i = 0; i < out.slots.size(); ++i) {
            out.slots[i] += other[i];
        }
        out.size = std::max(a.size(), b.size());
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::sub(const Cipher& a, const Cipher& b) const {
    return traced("sub", 0, a, [&] {
        check_owner(a);
        check_owner(b);
        scheme().check_same_level(a.level(), b.level());
        scheme().check_same_scale(a.scale(), b.scale());
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().sub(a.real(), b.real()), id_);
        }
        MockCiphertext out = a.mock();
        const auto& other = b.mock().slots;
        for (std::size_t i = 0; i < out.slots.size(); ++i) {
            out.slots[i] -= other[i];
        }
        out.size = std::max(a.size(), b.size());
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::negate(const Cipher& a) const {
    return traced("negate", 0, a, [&] {
        check_owner(a);
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().negate(a.real()), id_);
        }
        MockCiphertext out = a.mock();
        for (auto& x : out.slots) {
            x = -x;
        }
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::add_plain(const Cipher& a, std::span<const double> values) const {
    return traced("add_plain", 0, a, [&] {
        check_owner(a);
        check_length(values, slot_count());
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().add_plain(a.real(), encode_for(values, a.level(), a.scale())), id_);
        }
        MockCiphertext out = a.mock();
        for (std::size_t i = 0; i < values.size(); ++i) {
            out.slots[i] += values[i];
        }
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::sub_plain(const Cipher& a, std::span<const double> values) const {
    return traced("sub_plain", 0, a, [&] {
        check_owner(a);
        check_length(values, slot_count());
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().sub_plain(a.real(), encode_for(values, a.level(), a.scale())), id_);
        }
        MockCiphertext out = a.mock();
        for (std::size_t i = 0; i < values.size(); ++i) {
            out.slots[i] -= values[i];
        }
        return Cipher(std::move(out), id_);
    });
}

namespace {

void mock_rescale(MockCiphertext& ct, const Scheme& scheme) {
    ct.scale /= static_cast<double>(scheme.chain_prime(ct.level));
    ct.level -= 1;
}

}  // namespace

Cipher Backend::mul(const Cipher& a, const Cipher& b) const {
    return traced("mul", 0, a, [&] {
        check_owner(a);
        check_owner(b);
        const bool auto_rescale = ctx_.flags().auto_rescale;
        const bool auto_relin = ctx_.flags().auto_relin;
        if (auto_rescale) {
            require(a.level() >= 1 && b.level() >= 1, ErrorCode::LevelExhausted,
                    "multiplication needs a level to rescale into");
        }
        require(a.size() == 2 && b.size() == 2, ErrorCode::InvalidOperand, "multiply needs relinearized operands");
        scheme().check_same_level(a.level(), b.level());
        scheme().check_product_scale(a.level(), a.scale(), b.scale());
        if (auto_relin) {
            require(ctx_.has_relin_key(), ErrorCode::MissingKey, "relinearization key is not available");
        }
        if (kind_ == BackendKind::Real) {
            Ciphertext ct = scheme().multiply(a.real(), b.real());
            if (auto_relin) {
                ct = scheme().relinearize(ct, ctx_.relin_key());
            }
            if (auto_rescale) {
                ct = scheme().rescale(ct);
            }
            return Cipher(std::move(ct), id_);
        }
        MockCiphertext out = a.mock();
        const auto& other = b.mock().slots;
        for (std::size_t i = 0; i < out.slots.size(); ++i) {
            out.slots[i] *= other[i];
        }
        out.scale = a.scale() * b.scale();
        out.size = auto_relin ? 2 : 3;
        if (auto_rescale) {
            mock_rescale(out, scheme());
        }
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::mul_plain(const Cipher& a, std::span<const double> values) const {
    return traced("mul_plain", 0, a, [&] {
        check_owner(a);
        check_length(values, slot_count());
        const bool auto_rescale = ctx_.flags().auto_rescale;
        if (auto_rescale) {
            require(a.level() >= 1, ErrorCode::LevelExhausted, "multiplication needs a level to rescale into");
        }
        const double plain_scale = auto_rescale ? lazy_plain_scale(a) : default_scale();
        scheme().check_product_scale(a.level(), a.scale(), plain_scale);
        if (kind_ == BackendKind::Real) {
            Ciphertext ct = scheme().multiply_plain(a.real(), encode_for(values, a.level(), plain_scale));
            if (auto_rescale) {
                ct = scheme().rescale(ct);
            }
            return Cipher(std::move(ct), id_);
        }
        MockCiphertext out = a.mock();
        for (std::size_t i = 0; i < out.slots.size(); ++i) {
            out.slots[i] *= i < values.size() ? values[i] : 0.0;
        }
        out.scale = a.scale() * plain_scale;
        if (auto_rescale) {
            mock_rescale(out, scheme());
        }
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::mul_plain_lazy(const Cipher& a, std::span<const double> values) const {
    return traced("mul_plain_lazy", 0, a, [&] {
        check_owner(a);
        check_length(values, slot_count());
        require(a.level() >= 1, ErrorCode::LevelExhausted, "multiplication needs a level to rescale into");
        const double plain_scale = lazy_plain_scale(a);
        scheme().check_product_scale(a.level(), a.scale(), plain_scale);
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().multiply_plain(a.real(), encode_for(values, a.level(), plain_scale)), id_);
        }
        MockCiphertext out = a.mock();
        for (std::size_t i = 0; i < out.slots.size(); ++i) {
            out.slots[i] *= i < values.size() ? values[i] : 0.0;
        }
        out.scale = a.scale() * plain_scale;
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::relinearize(const Cipher& a) const {
    return traced("relinearize", 0, a, [&] {
        check_owner(a);
        require(ctx_.has_relin_key(), ErrorCode::MissingKey, "relinearization key is not available");
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().relinearize(a.real(), ctx_.relin_key()), id_);
        }
        MockCiphertext out = a.mock();
        out.size = 2;
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::rescale(const Cipher& a) const {
    return traced("rescale", 0, a, [&] {
        check_owner(a);
        require(a.level() >= 1, ErrorCode::LevelExhausted, "no chain prime left to rescale by (level 0)");
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().rescale(a.real()), id_);
        }
        MockCiphertext out = a.mock();
        mock_rescale(out, scheme());
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::mod_drop(const Cipher& a, int level) const {
    return traced("mod_drop", 0, a, [&] {
        check_owner(a);
        require(level >= 0 && level <= a.level(), ErrorCode::LevelMismatch,
                "cannot move a level-" + std::to_string(a.level()) + " ciphertext to level " + std::to_string(level));
        if (kind_ == BackendKind::Real) {
            return Cipher(scheme().mod_drop(a.real(), level), id_);
        }
        MockCiphertext out = a.mock();
        out.level = level;
        return Cipher(std::move(out), id_);
    });
}

Cipher Backend::rotate(const Cipher& a, long long step) const {
    return traced("rotate", step, a, [&] {
        check_owner(a);
        const auto plan = scheme().rotation_plan(step, ctx_.galois_steps());
        require(plan.has_value(), ErrorCode::MissingGaloisKey,
                "no Galois key (or power-of-two decomposition) for rotation step " + std::to_string(step));
        require(a.size() == 2, ErrorCode::InvalidOperand, "rotate needs a relinearized ciphertext");
        if (kind_ == BackendKind::Real) {
            Ciphertext ct = a.real();
            for (std::size_t s : *plan) {
                ct = scheme().rotate_single(ct, s, ctx_.galois_keys().keys.at(s));
            }
            return Cipher(std::move(ct), id_);
        }
        const MockCiphertext& in = a.mock();
        MockCiphertext out = in;
        const std::size_t slots = in.slots.size();
        const std::size_t k = scheme().normalize_step(step);
        for (std::size_t i = 0; i < slots; ++i) {
            out.slots[i] = in.slots[(i + k) % slots];
        }
        return Cipher(std::move(out), id_);
    });
}

}  // namespace hets
