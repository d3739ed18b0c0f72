// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hets/backend.hpp"
#include "hets/tensors.hpp"

namespace hets::wire {

/// Frame layout, all integers little-endian:
///   "HETS" | u16 version | u8 kind | u64 payload length | payload | u32 CRC-32 of payload
enum class FrameKind : uint8_t {
    PublicContext = 0,
    Ciphertext = 1,
    EncryptedVector = 2,
    InferRequest = 3,
    InferResponse = 4,
    Error = 5,
    PrivateContext = 6,
};

inline constexpr uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 15;
inline constexpr std::size_t kTrailerSize = 4;

std::string frame_kind_name(FrameKind kind);

struct FrameHeader {
    FrameKind kind = FrameKind::Error;
    uint64_t length = 0;
};

struct Frame {
    FrameKind kind = FrameKind::Error;
    std::vector<uint8_t> payload;
};

std::vector<uint8_t> encode_frame(FrameKind kind, std::span<const uint8_t> payload);
/// Checks magic, version and kind of the first kHeaderSize bytes.
FrameHeader decode_header(std::span<const uint8_t> bytes);
/// Exactly one frame. BadMagic, UnsupportedVersion, Truncated or BadChecksum.
Frame decode_frame(std::span<const uint8_t> bytes);
/// decode_frame plus a kind check (InvalidOperand on a well-formed frame of another kind).
Frame expect_frame(std::span<const uint8_t> bytes, FrameKind kind);

// Ciphertext payload: u64 parameter fingerprint, u16 level, f64 scale, u8 part
// count, then every residue of every part packed in exactly its prime's bit width.
std::vector<uint8_t> ciphertext_payload(const Scheme& scheme, const Ciphertext& ct);
Ciphertext parse_ciphertext(const Scheme& scheme, std::span<const uint8_t> payload);

std::vector<uint8_t> serialize_ciphertext(const Scheme& scheme, const Ciphertext& ct);
/// ParamMismatch when the ciphertext was made under other parameters.
Ciphertext deserialize_ciphertext(const Scheme& scheme, std::span<const uint8_t> bytes);

/// Ciphertext payload followed by the packing metadata. Real backends only.
std::vector<uint8_t> vector_payload(const Backend& b, const EncryptedVector& ev);
EncryptedVector parse_vector(const Backend& b, std::span<const uint8_t> payload);
std::vector<uint8_t> serialize_vector(const Backend& b, const EncryptedVector& ev,
                                      FrameKind kind = FrameKind::EncryptedVector);
EncryptedVector deserialize_vector(const Backend& b, std::span<const uint8_t> bytes,
                                   FrameKind kind = FrameKind::EncryptedVector);

/// Parameters, flags, public, relinearization and Galois keys. Key-switching
/// keys carry only their seed and b halves.
std::vector<uint8_t> serialize_public_context(const Context& ctx);
/// The public part plus the ternary secret (MissingKey without it).
std::vector<uint8_t> serialize_private_context(const Context& ctx);
/// Accepts either context frame.
Context deserialize_context(std::span<const uint8_t> bytes, std::size_t workers = 1);

std::vector<uint8_t> serialize_error(ErrorCode code, const std::string& message);
/// Raises the error carried by an Error frame payload.
[[noreturn]] void raise_error_payload(std::span<const uint8_t> payload);

/// IoError when the file cannot be written or read.
void write_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);
std::vector<uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace hets::wire
