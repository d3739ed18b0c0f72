// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hets/context.hpp"
#include "hets/error.hpp"
#include "hets/scheme.hpp"

namespace hets {

enum class BackendKind { Real, Mock };

std::string backend_kind_name(BackendKind kind);
/// "real" or "mock"; InvalidParams otherwise.
BackendKind parse_backend_kind(const std::string& name);

/// Exact slot values with the metadata of the ciphertext they stand for.
struct MockCiphertext {
    std::vector<double> slots;
    int level = 0;
    double scale = 1.0;
    std::size_t size = 2;
};

/// A backend value: a real ciphertext or its mock counterpart, tagged with the
/// backend instance that produced it.
class Cipher {
public:
    Cipher() = default;
    Cipher(Ciphertext ct, uint64_t backend_id) : value_(std::move(ct)), backend_id_(backend_id) {}
    Cipher(MockCiphertext ct, uint64_t backend_id) : value_(std::move(ct)), backend_id_(backend_id) {}

    bool is_mock() const { return std::holds_alternative<MockCiphertext>(value_); }
    uint64_t backend_id() const { return backend_id_; }
    int level() const;
    double scale() const;
    std::size_t size() const;

    /// InvalidOperand when the handle holds the other kind.
    const Ciphertext& real() const;
    const MockCiphertext& mock() const;

private:
    std::variant<MockCiphertext, Ciphertext> value_;
    uint64_t backend_id_ = 0;
};

/// One backend operation as seen by the trace hook.
struct TraceEntry {
    std::string tag;
    std::string op;
    long long step = 0;  // rotation step as requested, 0 otherwise
    int level = 0;       // output level (input level on failure)
    int scale_log2 = 0;  // round(log2(output scale))
    std::optional<ErrorCode> error;

    bool operator==(const TraceEntry&) const = default;
};

using TraceSink = std::function<void(const TraceEntry&)>;

/// Thread-safe collector for trace entries.
class TraceRecorder {
public:
    TraceSink sink();
    std::vector<TraceEntry> entries() const;
    std::vector<TraceEntry> entries_with_tag(const std::string& tag) const;
    void clear();

private:
    mutable std::mutex mutex_;
    std::vector<TraceEntry> entries_;
};

/// Evaluation interface over a context. Both kinds run the same metadata checks
/// in the same order and raise the same errors; the real kind transforms
/// ciphertexts, the mock kind computes exactly on slot vectors.
class Backend {
public:
    Backend(Context ctx, BackendKind kind, uint64_t seed = 0);

    BackendKind kind() const { return kind_; }
    uint64_t id() const { return id_; }
    const Context& context() const { return ctx_; }
    const Scheme& scheme() const { return *ctx_.scheme(); }
    std::size_t slot_count() const { return ctx_.slot_count(); }
    int top_level() const { return ctx_.scheme()->top_level(); }
    double default_scale() const { return ctx_.params().scale; }

    /// The sink is called from the evaluating thread(s); it must be thread-safe.
    void set_trace(TraceSink sink) { trace_ = std::move(sink); }

    /// Fresh encryption at the top level and default scale (values zero-padded).
    /// Uses the secret key when the context holds one, the public key otherwise.
    Cipher encrypt(std::span<const double> values);
    Cipher encrypt_at(std::span<const double> values, int level, double scale);
    /// All slots. MissingKey without a secret key.
    std::vector<double> decrypt(const Cipher& a) const;

    Cipher add(const Cipher& a, const Cipher& b) const;
    Cipher sub(const Cipher& a, const Cipher& b) const;
    Cipher negate(const Cipher& a) const;
    /// Plain operand encoded at the ciphertext's level and scale.
    Cipher add_plain(const Cipher& a, std::span<const double> values) const;
    Cipher sub_plain(const Cipher& a, std::span<const double> values) const;

    /// Ciphertext product honouring the context's auto_relin / auto_rescale flags.
    Cipher mul(const Cipher& a, const Cipher& b) const;
    /// Plain product. With auto_rescale the plaintext is encoded at
    /// q_level * scale / a.scale so that the rescaled result sits at the default
    /// scale; without it the plaintext uses the default scale and no rescale runs.
    Cipher mul_plain(const Cipher& a, std::span<const double> values) const;
    /// Plain product at the auto-rescale plaintext scale, without the rescale
    /// (for accumulating several products before one rescale).
    Cipher mul_plain_lazy(const Cipher& a, std::span<const double> values) const;

    Cipher relinearize(const Cipher& a) const;
    Cipher rescale(const Cipher& a) const;
    Cipher mod_drop(const Cipher& a, int level) const;
    /// Left rotation by step (negative rotates right).
    Cipher rotate(const Cipher& a, long long step) const;

private:
    void check_owner(const Cipher& a) const;
    void record(const char* op, long long step, int level, double scale, std::optional<ErrorCode> error) const;
    template <class F>
    Cipher traced(const char* op, long long step, const Cipher& in, F&& body) const;
    double lazy_plain_scale(const Cipher& a) const;
    Plaintext encode_for(std::span<const double> values, int level, double scale) const;

    Context ctx_;
    BackendKind kind_;
    uint64_t id_;
    TraceSink trace_;
    mutable std::mutex rng_mutex_;
    Prng rng_;
};

using BackendPtr = std::shared_ptr<Backend>;

}  // namespace hets
