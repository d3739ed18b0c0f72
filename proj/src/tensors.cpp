// SPDX-License-Identifier: Apache-2.0
#include "hets/tensors.hpp"

#include <algorithm>
#include <bit>

#include "hets/parallel.hpp"
#include "hets/trace.hpp"

namespace hets {

namespace {

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

void require_vector(const PlainTensor& t, std::size_t length) {
    t.validate();
    require(t.rank() == 1 && t.size() == length, ErrorCode::ShapeMismatch,
            "expected a vector of length " + std::to_string(length) + ", got shape " + shape_str(t.shape));
}

/// values repeated `copies` times back to back.
std::vector<double> tiled(std::span<const double> values, std::size_t copies) {
    std::vector<double> out;
    out.reserve(values.size() * copies);
    for (std::size_t k = 0; k < copies; ++k) {
        out.insert(out.end(), values.begin(), values.end());
    }
    return out;
}

/// Brings both ciphertexts to the lower of their levels.
std::pair<Cipher, Cipher> aligned(const Backend& b, const Cipher& x, const Cipher& y) {
    const int level = std::min(x.level(), y.level());
    return {x.level() == level ? x : b.mod_drop(x, level), y.level() == level ? y : b.mod_drop(y, level)};
}

/// Fixed pairwise tree: ((0+1)+(2+3))+... independent of scheduling.
Cipher tree_sum(const Backend& b, std::vector<Cipher> items) {
    require(!items.empty(), ErrorCode::InvalidOperand, "nothing to sum");
    while (items.size() > 1) {
        std::vector<Cipher> next;
        for (std::size_t i = 0; i + 1 < items.size(); i += 2) {
            auto [x, y] = aligned(b, items[i], items[i + 1]);
            next.push_back(b.add(x, y));
        }
        if (items.size() % 2) {
            next.push_back(items.back());
        }
        items = std::move(next);
    }
    return items.front();
}

/// Adds every slot into every slot.
Cipher rotate_sum_all(const Backend& b, Cipher c) {
    for (std::size_t k = 1; k < b.slot_count(); k <<= 1) {
        c = b.add(c, b.rotate(c, static_cast<long long>(k)));
    }
    return c;
}

std::string scoped_tag(const std::string& suffix) {
    const std::string& base = current_trace_tag();
    return base.empty() ? suffix : base + "/" + suffix;
}

EncryptedVector binary_op(const Backend& b, const EncryptedVector& x, const EncryptedVector& y, int which) {
    require(x.length == y.length, ErrorCode::ShapeMismatch,
            "operand lengths " + std::to_string(x.length) + " and " + std::to_string(y.length) + " differ");
    require(!x.layout && !y.layout, ErrorCode::LayoutMismatch, "element-wise ops need flat vectors");
    auto [cx, cy] = aligned(b, x.ct, y.ct);
    EncryptedVector out;
    out.ct = which == 0 ? b.add(cx, cy) : which == 1 ? b.sub(cx, cy) : b.mul(cx, cy);
    out.length = x.length;
    out.replicas = std::min(x.replicas, y.replicas);
    out.valid_span = std::min(x.valid_span, y.valid_span);
    out.clean_tail = which == 2 ? (x.clean_tail || y.clean_tail) : (x.clean_tail && y.clean_tail);
    return out;
}

EncryptedVector plain_op(const Backend& b, const EncryptedVector& x, const PlainTensor& y, int which) {
    require_vector(y, x.length);
    require(!x.layout, ErrorCode::LayoutMismatch, "element-wise ops need flat vectors");
    const auto pattern = tiled(y.data, x.replicas);
    EncryptedVector out = x;
    out.ct = which == 0 ? b.add_plain(x.ct, pattern) : which == 1 ? b.sub_plain(x.ct, pattern) : b.mul_plain(x.ct, pattern);
    out.valid_span = x.replicas * x.length;
    out.clean_tail = which == 2 || x.clean_tail;
    return out;
}

/// x^(2^k) for k <= max_bit.
std::vector<Cipher> square_ladder(const Backend& b, const Cipher& x, int max_bit) {
    std::vector<Cipher> squares{x};
    for (int k = 1; k <= max_bit; ++k) {
        squares.push_back(b.mul(squares.back(), squares.back()));
    }
    return squares;
}

/// Combines the ladder entries for the set bits of p, lowest first, so that the
/// product has depth ceil(log2 p).
Cipher ladder_power(const Backend& b, const std::vector<Cipher>& squares, unsigned p) {
    std::optional<Cipher> acc;
    for (int k = 0; (p >> k) != 0; ++k) {
        if ((p >> k) & 1U) {
            if (!acc) {
                acc = squares[static_cast<std::size_t>(k)];
            } else {
                auto [x, y] = aligned(b, *acc, squares[static_cast<std::size_t>(k)]);
                acc = b.mul(x, y);
            }
        }
    }
    return *acc;
}

}  // namespace

PlainTensor PlainTensor::vector(std::vector<double> values) {
    PlainTensor t;
    t.shape = {values.size()};
    t.data = std::move(values);
    return t;
}

PlainTensor PlainTensor::matrix(std::vector<double> values, std::size_t rows, std::size_t cols) {
    PlainTensor t{std::move(values), {rows, cols}};
    t.validate();
    return t;
}

void PlainTensor::validate() const {
    std::size_t count = 1;
    for (auto d : shape) {
        require(d > 0, ErrorCode::ShapeError, "tensor shape " + shape_str(shape) + " has a zero dimension");
        count *= d;
    }
    require(!shape.empty() && count == data.size(), ErrorCode::ShapeError,
            "tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
}

EncryptedVector encrypt_vector(Backend& b, const PlainTensor& v, bool replicate) {
    v.validate();
    require(v.rank() == 1, ErrorCode::ShapeMismatch, "encrypt_vector needs a rank-1 tensor");
    const std::size_t n = v.size();
    require(n <= b.slot_count(), ErrorCode::TooLong,
            std::to_string(n) + " values exceed " + std::to_string(b.slot_count()) + " slots");
    EncryptedVector ev;
    ev.length = n;
    ev.replicas = replicate ? b.slot_count() / n : 1;
    ev.valid_span = ev.replicas * n;
    ev.ct = b.encrypt(tiled(v.data, ev.replicas));
    return ev;
}

PlainTensor decrypt_vector(const Backend& b, const EncryptedVector& ev) {
    auto slots = b.decrypt(ev.ct);
    slots.resize(ev.length);
    return PlainTensor::vector(std::move(slots));
}

EncryptedVector negate(const Backend& b, const EncryptedVector& a) {
    EncryptedVector out = a;
    out.ct = b.negate(a.ct);
    return out;
}

EncryptedVector square(const Backend& b, const EncryptedVector& a) {
    EncryptedVector out = a;
    out.ct = b.mul(a.ct, a.ct);
    return out;
}

EncryptedVector power(const Backend& b, const EncryptedVector& a, unsigned p) {
    require(p >= 1, ErrorCode::ZeroExponent, "power needs a positive exponent");
    const int max_bit = std::bit_width(p) - 1;
    EncryptedVector out = a;
    out.ct = ladder_power(b, square_ladder(b, a.ct, max_bit), p);
    return out;
}

EncryptedVector add(const Backend& b, const EncryptedVector& x, const EncryptedVector& y) { return binary_op(b, x, y, 0); }
EncryptedVector sub(const Backend& b, const EncryptedVector& x, const EncryptedVector& y) { return binary_op(b, x, y, 1); }
EncryptedVector mul(const Backend& b, const EncryptedVector& x, const EncryptedVector& y) { return binary_op(b, x, y, 2); }
EncryptedVector add_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y) { return plain_op(b, x, y, 0); }
EncryptedVector sub_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y) { return plain_op(b, x, y, 1); }
EncryptedVector mul_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y) { return plain_op(b, x, y, 2); }

EncryptedVector polyval(const Backend& b, const EncryptedVector& x, std::span<const double> coeffs) {
    require(!coeffs.empty(), ErrorCode::EmptyCoeffs, "polyval needs at least one coefficient");
    require(!x.layout, ErrorCode::LayoutMismatch, "polyval needs a flat vector");
    unsigned degree = 0;
    for (std::size_t i = 1; i < coeffs.size(); ++i) {
        if (coeffs[i] != 0.0) {
            degree = static_cast<unsigned>(i);
        }
    }
    const std::size_t span = x.replicas * x.length;
    std::vector<Cipher> terms;
    if (degree == 0) {
        terms.push_back(b.mul_plain(x.ct, std::vector<double>(span, 0.0)));
    } else {
        const auto squares = square_ladder(b, x.ct, std::bit_width(degree) - 1);
        for (unsigned i = 1; i <= degree; ++i) {
            if (coeffs[i] != 0.0) {
                terms.push_back(b.mul_plain(ladder_power(b, squares, i), std::vector<double>(span, coeffs[i])));
            }
        }
    }
    Cipher total = tree_sum(b, std::move(terms));
    if (coeffs[0] != 0.0) {
        total = b.add_plain(total, std::vector<double>(span, coeffs[0]));
    }
    EncryptedVector out = x;
    out.ct = std::move(total);
    out.valid_span = span;
    out.clean_tail = true;
    return out;
}

EncryptedVector dot(const Backend& b, const EncryptedVector& x, const EncryptedVector& y) {
    require(x.length == y.length, ErrorCode::ShapeMismatch,
            "operand lengths " + std::to_string(x.length) + " and " + std::to_string(y.length) + " differ");
    auto [cx, cy] = aligned(b, x.ct, y.ct);
    Cipher prod = b.mul(cx, cy);
    const bool single = x.replicas == 1 && y.replicas == 1 && (x.clean_tail || y.clean_tail);
    if (!single) {
        prod = b.mul_plain(prod, std::vector<double>(x.length, 1.0));
    }
    EncryptedVector out;
    out.ct = rotate_sum_all(b, prod);
    out.length = 1;
    out.replicas = b.slot_count();
    out.valid_span = b.slot_count();
    return out;
}

EncryptedVector dot_plain(const Backend& b, const EncryptedVector& x, const PlainTensor& y) {
    require_vector(y, x.length);
    EncryptedVector out;
    out.ct = rotate_sum_all(b, b.mul_plain(x.ct, y.data));
    out.length = 1;
    out.replicas = b.slot_count();
    out.valid_span = b.slot_count();
    return out;
}

EncryptedVector sum(const Backend& b, const EncryptedVector& x) {
    Cipher c = x.ct;
    if (x.replicas != 1 || !x.clean_tail) {
        c = b.mul_plain(c, std::vector<double>(x.length, 1.0));
    }
    EncryptedVector out;
    out.ct = rotate_sum_all(b, c);
    out.length = 1;
    out.replicas = b.slot_count();
    out.valid_span = b.slot_count();
    return out;
}

EncryptedVector dot_plain_matrix(const Backend& b, const EncryptedVector& v, const PlainTensor& m) {
    m.validate();
    require(m.rank() == 2 && m.shape[0] == v.length, ErrorCode::ShapeMismatch,
            "matrix shape " + shape_str(m.shape) + " does not fit a vector of length " + std::to_string(v.length));
    require(!v.layout, ErrorCode::LayoutMismatch, "dot_plain_matrix needs a flat vector");
    const std::size_t n = m.shape[0];
    const std::size_t cols = m.shape[1];
    require(v.valid_span >= (n - 1) + cols, ErrorCode::ReplicationExhausted,
            "valid span " + std::to_string(v.valid_span) + " cannot absorb " + std::to_string(n - 1) +
                " rotated slots for a " + std::to_string(cols) + "-column output");
    const std::size_t out_replicas = (v.valid_span - (n - 1)) / cols;
    const std::size_t out_span = out_replicas * cols;

    // rot(v, i) * diag_i == rot(v * diag_i', i) with diag_i' = rot(diag_i, -i) and
    // diag_i[s] = M[(s + i) mod n][s mod cols] for s < out_span. Rotating the
    // unrescaled products keeps key-switch noise negligible against their scale.
    const std::size_t slots = b.slot_count();
    auto shifted_diagonal = [&](std::size_t i) {
        std::vector<double> d(slots, 0.0);
        for (std::size_t s = 0; s < out_span; ++s) {
            d[(s + i) % slots] = m.at((s + i) % n, s % cols);
        }
        return d;
    };

    const std::string tag = scoped_tag("dot_plain_matrix");
    ScopedTraceTag guard(tag);
    const std::size_t blocks = (n + kDiagonalBlock - 1) / kDiagonalBlock;
    std::vector<Cipher> partial(blocks);
    parallel_for(blocks, [&](std::size_t blk) {
        const std::size_t first = blk * kDiagonalBlock;
        const std::size_t last = std::min(n, first + kDiagonalBlock);
        // Horner: acc = sum over the block of rot(p_i, i - first)
        Cipher acc = b.mul_plain_lazy(v.ct, shifted_diagonal(last - 1));
        for (std::size_t i = last - 1; i-- > first;) {
            acc = b.add(b.rotate(acc, 1), b.mul_plain_lazy(v.ct, shifted_diagonal(i)));
        }
        partial[blk] = first == 0 ? std::move(acc) : b.rotate(acc, static_cast<long long>(first));
    });

    EncryptedVector out;
    out.ct = b.rescale(tree_sum(b, std::move(partial)));
    out.length = cols;
    out.replicas = out_replicas;
    out.valid_span = out_span;
    out.clean_tail = true;
    return out;
}

EncryptedVector replicate(const Backend& b, const EncryptedVector& v) {
    require(!v.layout, ErrorCode::LayoutMismatch, "replicate needs a flat vector");
    require(v.clean_tail, ErrorCode::LayoutMismatch, "replicate needs zeros beyond the current copies");
    EncryptedVector out = v;
    std::size_t span = v.replicas * v.length;
    while (2 * span <= b.slot_count()) {
        out.ct = b.add(out.ct, b.rotate(out.ct, -static_cast<long long>(span)));
        span *= 2;
    }
    out.replicas = span / v.length;
    out.valid_span = span;
    return out;
}

Im2Col im2col_encode(const PlainTensor& image, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride) {
    image.validate();
    require(image.rank() == 2, ErrorCode::ShapeMismatch, "im2col needs a rank-2 image");
    const std::size_t h = image.shape[0];
    const std::size_t w = image.shape[1];
    require(kernel_h >= 1 && kernel_w >= 1 && stride >= 1, ErrorCode::ShapeMismatch, "kernel and stride must be positive");
    require(kernel_h <= h && kernel_w <= w, ErrorCode::ShapeMismatch,
            "kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) + " is larger than the image " +
                shape_str(image.shape));
    require((h - kernel_h) % stride == 0 && (w - kernel_w) % stride == 0, ErrorCode::ShapeMismatch,
            "windows do not tile the image " + shape_str(image.shape) + " with stride " + std::to_string(stride));
    const std::size_t out_h = (h - kernel_h) / stride + 1;
    const std::size_t out_w = (w - kernel_w) / stride + 1;
    Im2Col res;
    res.layout.windows = out_h * out_w;
    res.layout.taps = kernel_h * kernel_w;
    res.layout.chunk = std::bit_ceil(res.layout.windows);
    std::vector<double> mat(res.layout.windows * res.layout.taps);
    for (std::size_t r = 0; r < out_h; ++r) {
        for (std::size_t c = 0; c < out_w; ++c) {
            const std::size_t win = r * out_w + c;
            for (std::size_t j = 0; j < res.layout.taps; ++j) {
                mat[win * res.layout.taps + j] = image.at(r * stride + j / kernel_w, c * stride + j % kernel_w);
            }
        }
    }
    res.flat.assign(std::bit_ceil(res.layout.taps) * res.layout.chunk, 0.0);
    for (std::size_t win = 0; win < res.layout.windows; ++win) {
        for (std::size_t j = 0; j < res.layout.taps; ++j) {
            res.flat[j * res.layout.chunk + win] = mat[win * res.layout.taps + j];
        }
    }
    res.matrix = PlainTensor::matrix(std::move(mat), res.layout.windows, res.layout.taps);
    return res;
}

EncryptedVector encrypt_windows(Backend& b, const Im2Col& cols) {
    require(cols.flat.size() <= b.slot_count(), ErrorCode::TooLong,
            "window layout needs " + std::to_string(cols.flat.size()) + " slots, only " +
                std::to_string(b.slot_count()) + " available");
    // Tiling the layout over every slot makes the convolution fold periodic.
    EncryptedVector ev;
    ev.length = cols.flat.size();
    ev.replicas = b.slot_count() / ev.length;
    ev.valid_span = ev.replicas * ev.length;
    ev.ct = b.encrypt(tiled(cols.flat, ev.replicas));
    ev.layout = cols.layout;
    return ev;
}

EncryptedVector conv2d_im2col(const Backend& b, const EncryptedVector& v, const std::vector<PlainTensor>& kernels,
                              std::span<const double> bias) {
    require(v.layout.has_value(), ErrorCode::LayoutMismatch,
            "convolution needs a windowed input (stacked convolutions are not supported)");
    const WindowLayout lay = *v.layout;
    require(v.length == std::bit_ceil(lay.taps) * lay.chunk, ErrorCode::LayoutMismatch,
            "windowed vector length does not match its layout");
    require(!kernels.empty(), ErrorCode::ShapeMismatch, "convolution needs at least one kernel");
    for (const auto& k : kernels) {
        k.validate();
        require(k.size() == lay.taps, ErrorCode::LayoutMismatch,
                "kernel with " + std::to_string(k.size()) + " taps does not match " + std::to_string(lay.taps) +
                    "-tap windows");
    }
    const std::size_t channels = kernels.size();
    const std::size_t slots = b.slot_count();
    const std::size_t out_len = channels * lay.windows;
    require(out_len <= slots, ErrorCode::ShapeMismatch, "channel outputs do not fit the slots");
    require(bias.empty() || bias.size() == channels, ErrorCode::ShapeMismatch, "bias needs one value per channel");
    const int rounds = std::bit_width(lay.taps - 1);  // ceil(log2 taps)

    // With the input tiled over every slot, the folded channel k holds its
    // window w at every slot s with s mod chunk == w. When chunk == windows the
    // masks alone can then lay out a fully replicated output, no shifts needed.
    const bool periodic = v.valid_span == slots && lay.chunk == lay.windows && slots % out_len == 0;
    auto mask_for = [&](std::size_t k) {
        std::vector<double> mask(periodic ? slots : lay.windows, periodic ? 0.0 : 1.0);
        if (periodic) {
            for (std::size_t s = 0; s < slots; ++s) {
                mask[s] = (s % out_len) / lay.windows == k ? 1.0 : 0.0;
            }
        }
        return mask;
    };

    const std::string base = current_trace_tag();
    std::vector<Cipher> outputs(channels);
    parallel_for(channels, [&](std::size_t k) {
        const std::string prefix = (base.empty() ? "" : base + "/") + "conv.ch" + std::to_string(k);
        std::vector<double> pattern(lay.taps * lay.chunk, 0.0);
        for (std::size_t j = 0; j < lay.taps; ++j) {
            std::fill_n(pattern.begin() + static_cast<std::ptrdiff_t>(j * lay.chunk), lay.windows, kernels[k].data[j]);
        }
        pattern.resize(v.length, 0.0);
        Cipher c;
        {
            ScopedTraceTag tag(prefix + ".product");
            c = b.mul_plain_lazy(v.ct, tiled(pattern, v.replicas));
        }
        {
            // folding before the rescale keeps the key-switch noise far below the scale
            ScopedTraceTag tag(prefix + ".fold");
            for (int t = 0; t < rounds; ++t) {
                c = b.add(c, b.rotate(c, static_cast<long long>(lay.chunk << t)));
            }
            c = b.rescale(c);
        }
        ScopedTraceTag tag(prefix + ".mask");
        c = b.rescale(b.mul_plain_lazy(c, mask_for(k)));
        if (k > 0 && !periodic) {
            c = b.rotate(c, -static_cast<long long>(k * lay.windows));
        }
        outputs[k] = std::move(c);
    });

    EncryptedVector out;
    out.length = out_len;
    out.replicas = periodic ? slots / out_len : 1;
    out.valid_span = out.replicas * out_len;
    out.ct = tree_sum(b, std::move(outputs));
    if (!bias.empty()) {
        std::vector<double> bias_slots(out_len);
        for (std::size_t k = 0; k < channels; ++k) {
            std::fill_n(bias_slots.begin() + static_cast<std::ptrdiff_t>(k * lay.windows), lay.windows, bias[k]);
        }
        out.ct = b.add_plain(out.ct, tiled(bias_slots, out.replicas));
    }
    return out;
}

std::vector<int> conv_rotation_steps(std::size_t channels, std::size_t windows) {
    std::vector<int> steps;
    for (std::size_t k = 1; k < channels; ++k) {
        steps.push_back(-static_cast<int>(k * windows));
    }
    return steps;
}

std::vector<int> matrix_rotation_steps(std::size_t rows) {
    std::vector<int> steps;
    for (std::size_t first = kDiagonalBlock; first < rows; first += kDiagonalBlock) {
        steps.push_back(static_cast<int>(first));
    }
    return steps;
}

}  // namespace hets
