// SPDX-License-Identifier: Apache-2.0
#include "hets/wire.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hets::wire {
namespace {

constexpr uint8_t kMagic[4] = {'H', 'E', 'T', 'S'};
constexpr uint8_t kMaxKind = static_cast<uint8_t>(FrameKind::PrivateContext);

uint32_t crc32_of(std::span<const uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
        crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
        off += n;
    }
    return static_cast<uint32_t>(crc);
}

class Writer {
public:
    void u8(uint8_t v) { out_.push_back(v); }
    void u16(uint16_t v) { le(v, 2); }
    void u32(uint32_t v) { le(v, 4); }
    void u64(uint64_t v) { le(v, 8); }
    void i64(int64_t v) { le(static_cast<uint64_t>(v), 8); }
    void f64(double v) { le(std::bit_cast<uint64_t>(v), 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void bytes(std::span<const uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

    // LSB-first bit packing; flush() pads to a byte boundary.
    void bits(uint64_t v, int width) {
        acc_ |= static_cast<unsigned __int128>(v) << fill_;
        fill_ += width;
        while (fill_ >= 8) {
            out_.push_back(static_cast<uint8_t>(acc_));
            acc_ >>= 8;
            fill_ -= 8;
        }
    }
    void flush() {
        if (fill_ > 0) {
            out_.push_back(static_cast<uint8_t>(acc_));
        }
        acc_ = 0;
        fill_ = 0;
    }

    std::vector<uint8_t> take() { return std::move(out_); }

private:
    void le(uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
        }
    }

    std::vector<uint8_t> out_;
    unsigned __int128 acc_ = 0;
    int fill_ = 0;
};

class Reader {
public:
    explicit Reader(std::span<const uint8_t> in) : in_(in) {}

    uint8_t u8() { return static_cast<uint8_t>(le(1)); }
    uint16_t u16() { return static_cast<uint16_t>(le(2)); }
    uint32_t u32() { return static_cast<uint32_t>(le(4)); }
    uint64_t u64() { return le(8); }
    int64_t i64() { return static_cast<int64_t>(le(8)); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    uint64_t bits(int width) {
        while (fill_ < width) {
            need(1);
            acc_ |= static_cast<unsigned __int128>(in_[pos_++]) << fill_;
            fill_ += 8;
        }
        const uint64_t mask = width == 64 ? ~0ULL : ((1ULL << width) - 1);
        const uint64_t v = static_cast<uint64_t>(acc_) & mask;
        acc_ >>= width;
        fill_ -= width;
        return v;
    }
    void align() {
        acc_ = 0;
        fill_ = 0;
    }

    std::size_t remaining() const { return in_.size() - pos_; }
    void finish() const { require(pos_ == in_.size(), ErrorCode::Truncated, "trailing bytes after payload"); }

private:
    void need(std::size_t n) const {
        require(in_.size() - pos_ >= n, ErrorCode::Truncated, "payload ends early");
    }
    uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<uint64_t>(in_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const uint8_t> in_;
    std::size_t pos_ = 0;
    unsigned __int128 acc_ = 0;
    int fill_ = 0;
};

[[noreturn]] void bad_field(const std::string& what) { fail(ErrorCode::UnsupportedVersion, "invalid field: " + what); }

// Rows of a polynomial whose prime list the reader already knows.
void write_rows(Writer& w, const RingPoly& p) {
    for (std::size_t k = 0; k < p.prime_count(); ++k) {
        const int width = std::bit_width(p.modulus(k).value());
        for (uint64_t x : p.row(k)) {
            w.bits(x, width);
        }
        w.flush();
    }
}

void read_rows(Reader& r, RingPoly& p) {
    for (std::size_t k = 0; k < p.prime_count(); ++k) {
        const uint64_t q = p.modulus(k).value();
        const int width = std::bit_width(q);
        for (auto& x : p.row(k)) {
            x = r.bits(width);
            if (x >= q) {
                bad_field("residue not below its prime");
            }
        }
        r.align();
    }
}

// General polynomial: domain, prime ids, rows.
void write_poly(Writer& w, const RingPoly& p) {
    w.u8(static_cast<uint8_t>(p.domain()));
    w.u32(static_cast<uint32_t>(p.prime_count()));
    for (auto id : p.prime_ids()) {
        w.u32(static_cast<uint32_t>(id));
    }
    write_rows(w, p);
}

RingPoly read_poly(Reader& r, const RingContextPtr& ring) {
    const uint8_t domain = r.u8();
    if (domain > 1) {
        bad_field("polynomial domain");
    }
    const uint32_t count = r.u32();
    if (count == 0 || count > ring->prime_count()) {
        bad_field("polynomial prime count");
    }
    std::vector<std::size_t> ids(count);
    for (auto& id : ids) {
        id = r.u32();
        if (id >= ring->prime_count()) {
            bad_field("polynomial prime id");
        }
    }
    RingPoly p(ring, std::move(ids), static_cast<Domain>(domain));
    read_rows(r, p);
    return p;
}

void write_switch_key(Writer& w, const KeySwitchKey& key) {
    w.u64(key.seed);
    w.u32(static_cast<uint32_t>(key.b.size()));
    for (const auto& row : key.b) {
        w.u32(static_cast<uint32_t>(row.size()));
        for (const auto& p : row) {
            write_poly(w, p);
        }
    }
}

KeySwitchKey read_switch_key(Reader& r, const Scheme& scheme) {
    KeySwitchKey key;
    key.seed = r.u64();
    const uint32_t rows = r.u32();
    if (rows != scheme.params().data_prime_count()) {
        bad_field("key-switching row count");
    }
    key.b.resize(rows);
    for (uint32_t i = 0; i < rows; ++i) {
        const uint32_t pieces = r.u32();
        if (pieces != scheme.pieces_for(i)) {
            bad_field("key-switching piece count");
        }
        for (uint32_t j = 0; j < pieces; ++j) {
            key.b[i].push_back(read_poly(r, scheme.ring()));
        }
    }
    scheme.expand_key(key);
    return key;
}

void write_params(Writer& w, const SchemeParams& p) {
    w.str(p.name);
    w.u64(p.ring.degree);
    w.u32(static_cast<uint32_t>(p.ring.primes.size()));
    for (auto q : p.ring.primes) {
        w.u64(q);
    }
    w.f64(p.scale);
    w.str(p.security_note);
}

SchemeParams read_params(Reader& r) {
    SchemeParams p;
    p.name = r.str();
    p.ring.degree = r.u64();
    const uint32_t n = r.u32();
    if (n > 64) {
        bad_field("prime count");
    }
    for (uint32_t i = 0; i < n; ++i) {
        p.ring.primes.push_back(r.u64());
    }
    p.scale = r.f64();
    p.security_note = r.str();
    p.validate();
    return p;
}

std::vector<uint8_t> context_payload(const Context& ctx, bool with_secret) {
    require(!ctx.is_structural(), ErrorCode::MissingKey, "a structural context has no key material");
    Writer w;
    write_params(w, ctx.params());
    w.u8(ctx.flags().auto_rescale ? 1 : 0);
    w.u8(ctx.flags().auto_relin ? 1 : 0);
    const auto& gk = ctx.galois_keys();
    w.u32(static_cast<uint32_t>(gk.steps.size()));
    for (int s : gk.steps) {
        w.i64(s);
    }
    write_poly(w, ctx.public_key().b);
    write_poly(w, ctx.public_key().a);
    w.u8(ctx.has_relin_key() ? 1 : 0);
    if (ctx.has_relin_key()) {
        write_switch_key(w, ctx.relin_key().key);
    }
    w.u32(static_cast<uint32_t>(gk.keys.size()));
    for (const auto& [step, key] : gk.keys) {
        w.u64(step);
        write_switch_key(w, key);
    }
    if (with_secret) {
        const auto& coeffs = ctx.secret_key().coeffs;
        w.u32(static_cast<uint32_t>(coeffs.size()));
        for (int64_t c : coeffs) {
            w.bits(static_cast<uint64_t>(c + 1), 2);
        }
        w.flush();
    }
    return w.take();
}

}  // namespace

std::string frame_kind_name(FrameKind kind) {
    switch (kind) {
        case FrameKind::PublicContext: return "PublicContext";
        case FrameKind::Ciphertext: return "Ciphertext";
        case FrameKind::EncryptedVector: return "EncryptedVector";
        case FrameKind::InferRequest: return "InferRequest";
        case FrameKind::InferResponse: return "InferResponse";
        case FrameKind::Error: return "Error";
        case FrameKind::PrivateContext: return "PrivateContext";
    }
    return "Unknown";
}

std::vector<uint8_t> encode_frame(FrameKind kind, std::span<const uint8_t> payload) {
    Writer w;
    w.bytes(kMagic);
    w.u16(kVersion);
    w.u8(static_cast<uint8_t>(kind));
    w.u64(payload.size());
    w.bytes(payload);
    w.u32(crc32_of(payload));
    return w.take();
}

FrameHeader decode_header(std::span<const uint8_t> bytes) {
    require(bytes.size() >= kHeaderSize, ErrorCode::Truncated, "frame shorter than its header");
    require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::BadMagic, "frame does not start with HETS");
    Reader r(bytes.subspan(4, kHeaderSize - 4));
    const uint16_t version = r.u16();
    require(version == kVersion, ErrorCode::UnsupportedVersion, "frame version " + std::to_string(version));
    const uint8_t kind = r.u8();
    require(kind <= kMaxKind, ErrorCode::UnsupportedVersion, "unknown frame kind " + std::to_string(kind));
    FrameHeader h;
    h.kind = static_cast<FrameKind>(kind);
    h.length = r.u64();
    return h;
}

Frame decode_frame(std::span<const uint8_t> bytes) {
    const FrameHeader h = decode_header(bytes);
    const std::size_t body = bytes.size() - kHeaderSize;
    require(body >= kTrailerSize && h.length <= body - kTrailerSize, ErrorCode::Truncated,
            "frame announces " + std::to_string(h.length) + " payload bytes, " +
                std::to_string(body < kTrailerSize ? 0 : body - kTrailerSize) + " present");
    require(h.length == body - kTrailerSize, ErrorCode::Truncated, "trailing bytes after frame");
    const auto payload = bytes.subspan(kHeaderSize, h.length);
    Reader tail(bytes.subspan(kHeaderSize + h.length));
    require(tail.u32() == crc32_of(payload), ErrorCode::BadChecksum, "payload CRC-32 mismatch");
    return Frame{h.kind, {payload.begin(), payload.end()}};
}

Frame expect_frame(std::span<const uint8_t> bytes, FrameKind kind) {
    Frame f = decode_frame(bytes);
    if (f.kind == FrameKind::Error && kind != FrameKind::Error) {
        raise_error_payload(f.payload);
    }
    require(f.kind == kind, ErrorCode::InvalidOperand,
            "expected a " + frame_kind_name(kind) + " frame, got " + frame_kind_name(f.kind));
    return f;
}

std::vector<uint8_t> ciphertext_payload(const Scheme& scheme, const Ciphertext& ct) {
    Writer w;
    w.u64(params_fingerprint(scheme.params()));
    w.u16(static_cast<uint16_t>(ct.level));
    w.f64(ct.scale);
    w.u8(static_cast<uint8_t>(ct.parts.size()));
    for (const auto& p : ct.parts) {
        write_rows(w, p);
    }
    return w.take();
}

namespace {

Ciphertext read_ciphertext(Reader& r, const Scheme& scheme) {
    const uint64_t fp = r.u64();
    require(fp == params_fingerprint(scheme.params()), ErrorCode::ParamMismatch,
            "ciphertext was made under different parameters");
    Ciphertext ct;
    ct.level = r.u16();
    if (ct.level > scheme.top_level()) {
        bad_field("ciphertext level " + std::to_string(ct.level));
    }
    ct.scale = r.f64();
    if (!std::isfinite(ct.scale) || ct.scale <= 0.0) {
        bad_field("ciphertext scale");
    }
    const uint8_t parts = r.u8();
    if (parts < 2 || parts > 3) {
        bad_field("ciphertext part count");
    }
    const auto ids = scheme.level_primes(ct.level);
    for (uint8_t i = 0; i < parts; ++i) {
        RingPoly p(scheme.ring(), ids, Domain::Evaluation);
        read_rows(r, p);
        ct.parts.push_back(std::move(p));
    }
    return ct;
}

void write_vector_meta(Writer& w, const EncryptedVector& ev) {
    w.u64(ev.length);
    w.u64(ev.replicas);
    w.u64(ev.valid_span);
    w.u8(ev.clean_tail ? 1 : 0);
    w.u8(ev.layout ? 1 : 0);
    if (ev.layout) {
        w.u64(ev.layout->windows);
        w.u64(ev.layout->taps);
        w.u64(ev.layout->chunk);
    }
}

}  // namespace

Ciphertext parse_ciphertext(const Scheme& scheme, std::span<const uint8_t> payload) {
    Reader r(payload);
    Ciphertext ct = read_ciphertext(r, scheme);
    r.finish();
    return ct;
}

std::vector<uint8_t> serialize_ciphertext(const Scheme& scheme, const Ciphertext& ct) {
    return encode_frame(FrameKind::Ciphertext, ciphertext_payload(scheme, ct));
}

Ciphertext deserialize_ciphertext(const Scheme& scheme, std::span<const uint8_t> bytes) {
    return parse_ciphertext(scheme, expect_frame(bytes, FrameKind::Ciphertext).payload);
}

std::vector<uint8_t> vector_payload(const Backend& b, const EncryptedVector& ev) {
    require(!ev.ct.is_mock(), ErrorCode::BackendMismatch, "mock ciphertexts cannot be serialized");
    Writer w;
    w.bytes(ciphertext_payload(b.scheme(), ev.ct.real()));
    write_vector_meta(w, ev);
    return w.take();
}

EncryptedVector parse_vector(const Backend& b, std::span<const uint8_t> payload) {
    require(b.kind() == BackendKind::Real, ErrorCode::BackendMismatch, "mock backends cannot load ciphertexts");
    Reader r(payload);
    EncryptedVector ev;
    ev.ct = Cipher(read_ciphertext(r, b.scheme()), b.id());
    ev.length = r.u64();
    ev.replicas = r.u64();
    ev.valid_span = r.u64();
    const uint8_t clean = r.u8();
    const uint8_t has_layout = r.u8();
    if (clean > 1 || has_layout > 1) {
        bad_field("vector flags");
    }
    ev.clean_tail = clean == 1;
    if (has_layout) {
        WindowLayout l;
        l.windows = r.u64();
        l.taps = r.u64();
        l.chunk = r.u64();
        ev.layout = l;
    }
    r.finish();
    const std::size_t slots = b.scheme().slot_count();
    if (ev.length == 0 || ev.replicas == 0 || ev.valid_span > slots || ev.length > slots ||
        ev.replicas > slots / ev.length) {
        bad_field("vector packing");
    }
    return ev;
}

std::vector<uint8_t> serialize_vector(const Backend& b, const EncryptedVector& ev, FrameKind kind) {
    return encode_frame(kind, vector_payload(b, ev));
}

EncryptedVector deserialize_vector(const Backend& b, std::span<const uint8_t> bytes, FrameKind kind) {
    return parse_vector(b, expect_frame(bytes, kind).payload);
}

std::vector<uint8_t> serialize_public_context(const Context& ctx) {
    return encode_frame(FrameKind::PublicContext, context_payload(ctx, false));
}

std::vector<uint8_t> serialize_private_context(const Context& ctx) {
    require(ctx.has_secret_key(), ErrorCode::MissingKey, "context has no secret key");
    return encode_frame(FrameKind::PrivateContext, context_payload(ctx, true));
}

Context deserialize_context(std::span<const uint8_t> bytes, std::size_t workers) {
    Frame f = decode_frame(bytes);
    if (f.kind == FrameKind::Error) {
        raise_error_payload(f.payload);
    }
    require(f.kind == FrameKind::PublicContext || f.kind == FrameKind::PrivateContext, ErrorCode::InvalidOperand,
            "expected a context frame, got " + frame_kind_name(f.kind));
    Reader r(f.payload);
    const SchemeParams params = read_params(r);
    auto scheme = std::make_shared<const Scheme>(params);
    ContextFlags flags;
    const uint8_t rescale = r.u8();
    const uint8_t relin = r.u8();
    if (rescale > 1 || relin > 1) {
        bad_field("context flags");
    }
    flags.auto_rescale = rescale == 1;
    flags.auto_relin = relin == 1;
    flags.workers = workers;

    GaloisKeys gk;
    const uint32_t nsteps = r.u32();
    if (nsteps > 2 * scheme->slot_count()) {
        bad_field("rotation step count");
    }
    for (uint32_t i = 0; i < nsteps; ++i) {
        gk.steps.push_back(static_cast<int>(r.i64()));
    }
    PublicKey pk;
    pk.b = read_poly(r, scheme->ring());
    pk.a = read_poly(r, scheme->ring());
    std::optional<RelinKey> rlk;
    const uint8_t has_relin = r.u8();
    if (has_relin > 1) {
        bad_field("relinearization flag");
    }
    if (has_relin) {
        rlk = RelinKey{read_switch_key(r, *scheme)};
    }
    const uint32_t nkeys = r.u32();
    if (nkeys > scheme->slot_count()) {
        bad_field("Galois key count");
    }
    for (uint32_t i = 0; i < nkeys; ++i) {
        const uint64_t step = r.u64();
        if (step == 0 || step >= scheme->slot_count()) {
            bad_field("Galois step");
        }
        gk.keys.emplace(step, read_switch_key(r, *scheme));
    }
    if (f.kind == FrameKind::PublicContext) {
        r.finish();
        return Context::from_public_parts(std::move(scheme), std::move(pk), std::move(rlk), std::move(gk), flags);
    }
    SecretKey sk;
    const uint32_t n = r.u32();
    if (n != scheme->degree()) {
        bad_field("secret key length");
    }
    sk.coeffs.resize(n);
    for (auto& c : sk.coeffs) {
        const uint64_t v = r.bits(2);
        if (v > 2) {
            bad_field("secret key coefficient");
        }
        c = static_cast<int64_t>(v) - 1;
    }
    r.align();
    r.finish();
    std::vector<std::size_t> all(scheme->params().chain_length());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    sk.s = RingPoly::from_signed(scheme->ring(), all, sk.coeffs);
    sk.s.ntt_inplace();
    return Context::from_private_parts(std::move(scheme), std::move(sk), std::move(pk), std::move(rlk),
                                       std::move(gk), flags);
}

std::vector<uint8_t> serialize_error(ErrorCode code, const std::string& message) {
    Writer w;
    w.str(std::string(error_code_name(code)));
    w.str(message);
    return encode_frame(FrameKind::Error, w.take());
}

void raise_error_payload(std::span<const uint8_t> payload) {
    Reader r(payload);
    const std::string code = r.str();
    const std::string message = r.str();
    fail(error_code_from_name(code), "remote: " + message);
}

void write_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
    std::vector<uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrorCode::IoError, "cannot read " + path.string());
    return out;
}

}  // namespace hets::wire
