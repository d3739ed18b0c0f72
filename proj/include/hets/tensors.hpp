// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hets/backend.hpp"

namespace hets {

/// Dense row-major real tensor.
struct PlainTensor {
    std::vector<double> data;
    std::vector<std::size_t> shape;

    static PlainTensor vector(std::vector<double> values);
    static PlainTensor matrix(std::vector<double> values, std::size_t rows, std::size_t cols);

    /// ShapeError unless every dimension is positive and their product is data.size().
    void validate() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool operator==(const PlainTensor&) const = default;
};

/// Convolution windows laid out column by column: tap j of window w sits in
/// slot j * chunk + w.
struct WindowLayout {
    std::size_t windows = 0;
    std::size_t taps = 0;
    std::size_t chunk = 0;

    bool operator==(const WindowLayout&) const = default;
};

/// A logical vector packed into one ciphertext.
///
/// Slots [0, length) hold the vector and, when replicas > 1, exact copies sit at
/// offsets k * length for k < replicas. valid_span >= replicas * length counts the
/// leading slots that follow the periodic pattern; clean_tail says every slot at
/// or beyond replicas * length is (approximately) zero.
struct EncryptedVector {
    Cipher ct;
    std::size_t length = 0;
    std::size_t replicas = 1;
    std::size_t valid_span = 0;
    bool clean_tail = true;
    std::optional<WindowLayout> layout;

    int level() const { return ct.level(); }
};

EncryptedVector encrypt_vector(Backend& b, const PlainTensor& v, bool replicate = false);
PlainTensor decrypt_vector(const Backend& b, const EncryptedVector& ev);

EncryptedVector negate(const Backend& b, const EncryptedVector& a);
EncryptedVector square(const Backend& b, const EncryptedVector& a);
/// Element-wise a^p with ceil(log2 p) levels.
EncryptedVector power(const Backend& b, const EncryptedVector& a, unsigned p);

EncryptedVector add(const Backend& b, const EncryptedVector& x, const EncryptedVector& y);
EncryptedVector sub(const Backend& b, const EncryptedVector& x, const EncryptedVector& y);
EncryptedVector mul(const Backend& b, const EncryptedVector& x, const EncryptedVector& y);
EncryptedVector add_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y);
EncryptedVector sub_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y);
EncryptedVector mul_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y);

/// Sum of coeffs[i] * x^i (ascending degree).
EncryptedVector polyval(const Backend& b, const EncryptedVector& x, std::span<const double> coeffs);

/// Inner products; the result (length 1) is broadcast to every slot.
EncryptedVector dot(const Backend& b, const EncryptedVector& x, const EncryptedVector& y);
EncryptedVector dot_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y);
EncryptedVector sum(const Backend& b, const EncryptedVector& x);

/// v * M for an n x m plain matrix using generalized diagonals and left rotations
/// only. Needs replicas covering n - 1 extra slots past each output copy.
EncryptedVector dot_plain_matrix(const Backend& b, const EncryptedVector& v, const PlainTensor& m);

/// Fills the slots with as many copies as fit (power-of-two count). Needs a clean tail.
EncryptedVector replicate(const Backend& b, const EncryptedVector& v);

struct Im2Col {
    PlainTensor matrix;  // windows x taps
    std::vector<double> flat;  // column-major, each column padded to chunk
    WindowLayout layout;
};

Im2Col im2col_encode(const PlainTensor& image, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride);
EncryptedVector encrypt_windows(Backend& b, const Im2Col& cols);

/// One plain product per channel, ceil(log2 taps) rotate-add rounds, a 0/1 mask,
/// then channel k is moved to offset k * windows. Consumes two levels.
EncryptedVector conv2d_im2col(const Backend& b, const EncryptedVector& v, const std::vector<PlainTensor>& kernels,
                              std::span<const double> bias = {});

/// Diagonals handled per rotation chain in dot_plain_matrix.
inline constexpr std::size_t kDiagonalBlock = 16;

// Rotation steps worth a dedicated Galois key for the given shapes; everything
// else decomposes into the default +-2^k keys.
std::vector<int> conv_rotation_steps(std::size_t channels, std::size_t windows);
std::vector<int> matrix_rotation_steps(std::size_t rows);

}  // namespace hets
