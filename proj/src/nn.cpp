// SPDX-License-Identifier: Apache-2.0
#include "hets/nn.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hets/trace.hpp"
#include "json.hpp"

namespace hets {

using nlohmann::json;

namespace {

std::string layer_label(std::size_t index, const Layer& layer) {
    return "layer " + std::to_string(index) + " (" + layer_type(layer) + ")";
}

std::size_t conv_windows(const Conv2dLayer& c, std::size_t h, std::size_t w) {
    return ((h - c.kernel_h) / c.stride + 1) * ((w - c.kernel_w) / c.stride + 1);
}

PlainTensor as_image(const Model& model, const PlainTensor& image) {
    image.validate();
    const bool matrix = image.rank() == 2 && image.shape[0] == model.input_h && image.shape[1] == model.input_w;
    const bool flat = image.rank() == 1 && image.size() == model.input_h * model.input_w;
    require(matrix || flat, ErrorCode::ShapeError,
            "input of size " + std::to_string(image.size()) + " does not match the model input " +
                std::to_string(model.input_h) + "x" + std::to_string(model.input_w));
    return PlainTensor::matrix(image.data, model.input_h, model.input_w);
}

std::string ordinal(std::size_t n) {
    static const std::array<const char*, 6> words{"First", "Second", "Third", "Fourth", "Fifth", "Sixth"};
    return n < words.size() ? words[n] : "Activation " + std::to_string(n + 1);
}

std::string read_file(const std::filesystem::path& path, ErrorCode code) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), code, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    out.flush();
    require(static_cast<bool>(out), ErrorCode::IoError, "write to " + path.string() + " failed");
}

template <class T>
T field(const json& j, const char* key) {
    require(j.contains(key), ErrorCode::ParseError, std::string("missing field \"") + key + "\"");
    return j.at(key).get<T>();
}

json layer_to_json(const Layer& layer) {
    return std::visit(
        [](const auto& l) -> json {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Conv2dLayer>) {
                return {{"type", "conv2d"},       {"channels", l.channels}, {"kernel", {l.kernel_h, l.kernel_w}},
                        {"stride", l.stride},     {"weights", l.weights},   {"bias", l.bias}};
            } else if constexpr (std::is_same_v<T, SquareLayer>) {
                return {{"type", "square"}};
            } else {
                return {{"type", "linear"}, {"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}};
            }
        },
        layer);
}

Layer layer_from_json(const json& j) {
    const auto type = field<std::string>(j, "type");
    if (type == "conv2d") {
        Conv2dLayer c;
        c.channels = field<std::size_t>(j, "channels");
        const auto kernel = field<std::vector<std::size_t>>(j, "kernel");
        require(kernel.size() == 2, ErrorCode::ParseError, "\"kernel\" needs two entries");
        c.kernel_h = kernel[0];
        c.kernel_w = kernel[1];
        c.stride = field<std::size_t>(j, "stride");
        c.weights = field<std::vector<double>>(j, "weights");
        c.bias = field<std::vector<double>>(j, "bias");
        return c;
    }
    if (type == "square") {
        return SquareLayer{};
    }
    if (type == "linear") {
        LinearLayer l;
        l.in = field<std::size_t>(j, "in");
        l.out = field<std::size_t>(j, "out");
        l.weights = field<std::vector<double>>(j, "weights");
        l.bias = field<std::vector<double>>(j, "bias");
        return l;
    }
    fail(ErrorCode::ParseError, "unknown layer type \"" + type + "\"");
}

}  // namespace

int layer_depth(const Layer& layer) {
    return std::visit(
        [](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            return std::is_same_v<T, Conv2dLayer> ? 2 : 1;
        },
        layer);
}

std::string layer_type(const Layer& layer) {
    static const std::array<const char*, 3> names{"conv2d", "square", "linear"};
    return names[layer.index()];
}

void Model::validate() const {
    require(input_h > 0 && input_w > 0, ErrorCode::ShapeError, "input shape must be positive");
    require(!layers.empty(), ErrorCode::ShapeError, "model has no layers");
    std::size_t size = input_h * input_w;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = layer_label(i, layers[i]);
        if (const auto* c = std::get_if<Conv2dLayer>(&layers[i])) {
            require(i == 0, ErrorCode::ShapeError, where + ": convolution is only supported as the first layer");
            require(c->channels > 0 && c->kernel_h > 0 && c->kernel_w > 0 && c->stride > 0, ErrorCode::ShapeError,
                    where + ": channels, kernel and stride must be positive");
            require(c->kernel_h <= input_h && c->kernel_w <= input_w, ErrorCode::ShapeError,
                    where + ": kernel larger than the input");
            require((input_h - c->kernel_h) % c->stride == 0 && (input_w - c->kernel_w) % c->stride == 0,
                    ErrorCode::ShapeError, where + ": windows do not tile the input");
            require(c->weights.size() == c->channels * c->kernel_h * c->kernel_w, ErrorCode::ShapeError,
                    where + ": expected " + std::to_string(c->channels * c->kernel_h * c->kernel_w) + " weights, got " +
                        std::to_string(c->weights.size()));
            require(c->bias.size() == c->channels, ErrorCode::ShapeError, where + ": bias needs one value per channel");
            size = c->channels * conv_windows(*c, input_h, input_w);
        } else if (const auto* l = std::get_if<LinearLayer>(&layers[i])) {
            require(l->in == size, ErrorCode::ShapeError,
                    where + ": expects " + std::to_string(l->in) + " inputs, previous stage produces " +
                        std::to_string(size));
            require(l->out > 0, ErrorCode::ShapeError, where + ": needs at least one output");
            require(l->weights.size() == l->in * l->out, ErrorCode::ShapeError,
                    where + ": expected " + std::to_string(l->in * l->out) + " weights, got " +
                        std::to_string(l->weights.size()));
            require(l->bias.size() == l->out, ErrorCode::ShapeError, where + ": bias needs one value per output");
            size = l->out;
        }
    }
}

int Model::depth() const {
    int d = 0;
    for (const auto& l : layers) {
        d += layer_depth(l);
    }
    return d;
}

std::vector<std::size_t> Model::output_sizes() const {
    std::vector<std::size_t> sizes;
    std::size_t size = input_h * input_w;
    for (const auto& layer : layers) {
        if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            size = c->channels * conv_windows(*c, input_h, input_w);
        } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
            size = l->out;
        }
        sizes.push_back(size);
    }
    return sizes;
}

std::vector<int> Model::rotation_steps() const {
    std::vector<int> steps;
    for (const auto& layer : layers) {
        std::vector<int> more;
        if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            more = conv_rotation_steps(c->channels, conv_windows(*c, input_h, input_w));
        } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
            more = matrix_rotation_steps(l->in);
        }
        steps.insert(steps.end(), more.begin(), more.end());
    }
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

std::vector<std::string> stage_names(const Model& model) {
    std::vector<std::string> names;
    std::size_t squares = 0, linears = 0;
    for (const auto& layer : model.layers) {
        switch (layer.index()) {
            case 0: names.emplace_back("Convolutional layer evaluation"); break;
            case 1: names.push_back(ordinal(squares++) + " activation(square)"); break;
            default: names.push_back("FC" + std::to_string(++linears)); break;
        }
    }
    return names;
}

std::string model_to_json(const Model& model) {
    json j;
    j["format"] = "hets-model";
    j["version"] = 1;
    j["input_shape"] = {model.input_h, model.input_w};
    j["layers"] = json::array();
    for (const auto& layer : model.layers) {
        j["layers"].push_back(layer_to_json(layer));
    }
    return j.dump(1) + "\n";
}

Model model_from_json(const std::string& text, const std::string& label) {
    Model m;
    try {
        const json j = json::parse(text);
        require(j.is_object() && j.value("format", "") == "hets-model", ErrorCode::ParseError,
                "not a hets-model document");
        require(field<int>(j, "version") == 1, ErrorCode::ParseError, "unsupported model version");
        const auto shape = field<std::vector<std::size_t>>(j, "input_shape");
        require(shape.size() == 2, ErrorCode::ParseError, "\"input_shape\" needs two entries");
        m.input_h = shape[0];
        m.input_w = shape[1];
        for (const auto& l : field<json>(j, "layers")) {
            m.layers.push_back(layer_from_json(l));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, label + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ParseError) {
            throw;
        }
        fail(ErrorCode::ParseError, label + ": " + e.what());
    }
    m.validate();
    return m;
}

Model load_model(const std::filesystem::path& path) {
    return model_from_json(read_file(path, ErrorCode::ParseError), path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) {
    model.validate();
    write_file(path, model_to_json(model));
}

PlainTensor plain_layer(const Model& model, std::size_t index, const PlainTensor& input) {
    const Layer& layer = model.layers.at(index);
    if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
        const PlainTensor img = as_image(model, input);
        const std::size_t out_h = (model.input_h - c->kernel_h) / c->stride + 1;
        const std::size_t out_w = (model.input_w - c->kernel_w) / c->stride + 1;
        const std::size_t taps = c->kernel_h * c->kernel_w;
        std::vector<double> out(c->channels * out_h * out_w);
        for (std::size_t k = 0; k < c->channels; ++k) {
            for (std::size_t r = 0; r < out_h; ++r) {
                for (std::size_t s = 0; s < out_w; ++s) {
                    double acc = c->bias[k];
                    for (std::size_t j = 0; j < taps; ++j) {
                        acc += c->weights[k * taps + j] *
                               img.at(r * c->stride + j / c->kernel_w, s * c->stride + j % c->kernel_w);
                    }
                    out[(k * out_h + r) * out_w + s] = acc;
                }
            }
        }
        return PlainTensor::vector(std::move(out));
    }
    input.validate();
    if (std::holds_alternative<SquareLayer>(layer)) {
        std::vector<double> out(input.data);
        for (auto& x : out) {
            x *= x;
        }
        return PlainTensor::vector(std::move(out));
    }
    const auto& l = std::get<LinearLayer>(layer);
    require(input.size() == l.in, ErrorCode::ShapeError,
            layer_label(index, layer) + ": got " + std::to_string(input.size()) + " inputs");
    std::vector<double> out(l.bias);
    for (std::size_t i = 0; i < l.in; ++i) {
        for (std::size_t o = 0; o < l.out; ++o) {
            out[o] += input.data[i] * l.weights[i * l.out + o];
        }
    }
    return PlainTensor::vector(std::move(out));
}

PlainTensor plain_forward(const Model& model, const PlainTensor& image) {
    model.validate();
    PlainTensor x = as_image(model, image);
    if (!std::holds_alternative<Conv2dLayer>(model.layers.front())) {
        x = PlainTensor::vector(x.data);
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        x = plain_layer(model, i, x);
    }
    return x;
}

EncryptedVector prepare_input(Backend& b, const Model& model, const PlainTensor& image) {
    model.validate();
    const PlainTensor img = as_image(model, image);
    if (const auto* c = std::get_if<Conv2dLayer>(&model.layers.front())) {
        return encrypt_windows(b, im2col_encode(img, c->kernel_h, c->kernel_w, c->stride));
    }
    return encrypt_vector(b, PlainTensor::vector(img.data), true);
}

EncryptedVector encrypted_layer(const Backend& b, const Model& model, std::size_t index, const EncryptedVector& input) {
    const Layer& layer = model.layers.at(index);
    ScopedTraceTag tag("L" + std::to_string(index));
    if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
        require(input.level() >= layer_depth(layer), ErrorCode::LevelExhausted,
                "convolution needs " + std::to_string(layer_depth(layer)) + " levels, input has " +
                    std::to_string(input.level()));
        const std::size_t taps = c->kernel_h * c->kernel_w;
        std::vector<PlainTensor> kernels;
        for (std::size_t k = 0; k < c->channels; ++k) {
            kernels.push_back(PlainTensor::matrix(
                std::vector<double>(c->weights.begin() + static_cast<std::ptrdiff_t>(k * taps),
                                    c->weights.begin() + static_cast<std::ptrdiff_t>((k + 1) * taps)),
                c->kernel_h, c->kernel_w));
        }
        EncryptedVector out = conv2d_im2col(b, input, kernels, c->bias);
        return index + 1 < model.layers.size() ? replicate(b, out) : out;
    }
    if (std::holds_alternative<SquareLayer>(layer)) {
        return square(b, input);
    }
    const auto& l = std::get<LinearLayer>(layer);
    const EncryptedVector prod = dot_plain_matrix(b, input, PlainTensor::matrix(l.weights, l.in, l.out));
    return add_plain(b, prod, PlainTensor::vector(l.bias));
}

EncryptedVector encrypted_forward(const Backend& b, const Model& model, const EncryptedVector& input,
                                  const LayerObserver& observer) {
    model.validate();
    const auto names = stage_names(model);
    EncryptedVector x = input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        const int level_in = x.level();
        x = encrypted_layer(b, model, i, x);
        if (observer) {
            const std::chrono::duration<double, std::milli> ms = std::chrono::steady_clock::now() - start;
            observer(LayerEvent{i, names[i], level_in, x.level(), ms.count()});
        }
    }
    return x;
}

std::size_t argmax(const PlainTensor& logits) {
    require(logits.size() > 0, ErrorCode::ShapeError, "argmax of an empty tensor");
    return static_cast<std::size_t>(std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
}

// ---- fixtures -------------------------------------------------------------

namespace {

// Seven-segment strokes on the 28x28 canvas: endpoints (x0, y0, x1, y1).
constexpr std::array<std::array<double, 4>, 7> kSegments{{
    {8, 5, 19, 5},     // top
    {19, 5, 19, 14},   // upper right
    {19, 14, 19, 23},  // lower right
    {8, 23, 19, 23},   // bottom
    {8, 14, 8, 23},    // lower left
    {8, 5, 8, 14},     // upper left
    {8, 14, 19, 14},   // middle
}};

// Bit s set when digit d lights segment s.
constexpr std::array<unsigned, 10> kDigitSegments{0x3f, 0x06, 0x5b, 0x4f, 0x66, 0x6d, 0x7d, 0x07, 0x7f, 0x6f};

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    const double t = len2 > 0 ? std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0) : 0.0;
    return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

/// Scales weights and bias so the largest |activation| over the samples equals target.
template <class L>
void normalize(L& layer, const std::vector<PlainTensor>& activations, double target) {
    double peak = 0;
    for (const auto& a : activations) {
        for (double x : a.data) {
            peak = std::max(peak, std::abs(x));
        }
    }
    if (peak == 0) {
        return;
    }
    for (auto& w : layer.weights) {
        w *= target / peak;
    }
    for (auto& w : layer.bias) {
        w *= target / peak;
    }
}

std::vector<double> draw(Prng& rng, std::size_t n, double bound) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.uniform_real(-bound, bound);
    }
    return v;
}

}  // namespace

std::vector<PlainTensor> make_fixture_images(uint64_t seed, std::size_t count) {
    Prng rng(seed);
    std::vector<PlainTensor> images;
    for (std::size_t n = 0; n < count; ++n) {
        const unsigned mask = kDigitSegments[n % 10];
        const double shift_x = rng.uniform_real(-2, 2);
        const double shift_y = rng.uniform_real(-2, 2);
        const double slant = rng.uniform_real(-0.15, 0.15);
        const double width = rng.uniform_real(1.0, 1.8);
        std::vector<std::array<double, 4>> strokes;
        for (std::size_t s = 0; s < kSegments.size(); ++s) {
            if (mask >> s & 1U) {
                auto seg = kSegments[s];
                for (double& coord : seg) {
                    coord += rng.uniform_real(-1, 1);
                }
                strokes.push_back(seg);
            }
        }
        std::vector<double> px(28 * 28);
        for (std::size_t y = 0; y < 28; ++y) {
            for (std::size_t x = 0; x < 28; ++x) {
                // undo the slant and shift to find the canvas point
                const double cy = static_cast<double>(y) - shift_y;
                const double cx = static_cast<double>(x) - shift_x + slant * (cy - 14);
                double d = 1e9;
                for (const auto& s : strokes) {
                    d = std::min(d, segment_distance(cx, cy, s[0], s[1], s[2], s[3]));
                }
                px[y * 28 + x] = std::exp(-d * d / (2 * width * width));
            }
        }
        images.push_back(PlainTensor::matrix(std::move(px), 28, 28));
    }
    return images;
}

Model make_fixture_model(uint64_t seed, const std::vector<PlainTensor>& calibration) {
    Prng rng(seed);
    Model m;
    m.input_h = 28;
    m.input_w = 28;
    Conv2dLayer conv{4, 7, 7, 3, draw(rng, 4 * 49, 1.0), draw(rng, 4, 0.5)};
    LinearLayer fc1{256, 64, draw(rng, 256 * 64, 1.0 / 16), draw(rng, 64, 0.1)};
    LinearLayer fc2{64, 10, draw(rng, 64 * 10, 1.0 / 8), draw(rng, 10, 0.1)};
    m.layers = {conv, SquareLayer{}, fc1, SquareLayer{}, fc2};

    // Calibrate one affine layer at a time against the activations it actually sees.
    const std::array<std::pair<std::size_t, double>, 3> targets{{{0, 3.0}, {2, 3.0}, {4, 8.0}}};
    for (const auto& [index, target] : targets) {
        std::vector<PlainTensor> acts;
        for (const auto& img : calibration) {
            PlainTensor x = img;
            for (std::size_t i = 0; i <= index; ++i) {
                x = plain_layer(m, i, x);
            }
            acts.push_back(std::move(x));
        }
        std::visit(
            [&](auto& l) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(l)>, SquareLayer>) {
                    normalize(l, acts, target);
                }
            },
            m.layers[index]);
    }
    m.validate();
    return m;
}

std::string images_to_json(const std::vector<PlainTensor>& images) {
    json j;
    j["format"] = "hets-images";
    j["version"] = 1;
    j["images"] = json::array();
    for (const auto& img : images) {
        img.validate();
        require(img.rank() == 2, ErrorCode::ShapeError, "images must be rank 2");
        j["images"].push_back({{"shape", img.shape}, {"data", img.data}});
    }
    return j.dump(1) + "\n";
}

std::vector<PlainTensor> images_from_json(const std::string& text, const std::string& label) {
    std::vector<PlainTensor> out;
    try {
        const json j = json::parse(text);
        require(j.is_object() && j.value("format", "") == "hets-images" && j.value("version", 0) == 1,
                ErrorCode::ParseError, "not a version 1 hets-images document");
        for (const auto& img : field<json>(j, "images")) {
            const auto shape = field<std::vector<std::size_t>>(img, "shape");
            require(shape.size() == 2, ErrorCode::ParseError, "image shape needs two entries");
            out.push_back(PlainTensor::matrix(field<std::vector<double>>(img, "data"), shape[0], shape[1]));
            out.back().validate();
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, label + ": " + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::ParseError, label + ": " + e.what());
    }
    return out;
}

std::vector<PlainTensor> load_images(const std::filesystem::path& path) {
    return images_from_json(read_file(path, ErrorCode::ParseError), path.string());
}

void save_images(const std::vector<PlainTensor>& images, const std::filesystem::path& path) {
    write_file(path, images_to_json(images));
}

void write_fixtures(const std::filesystem::path& dir, const FixtureSeeds& seeds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    const auto images = make_fixture_images(seeds.images, seeds.image_count);
    save_model(make_fixture_model(seeds.weights, images), dir / "mnist_cnn.json");
    save_images(images, dir / "mnist_images.json");
    const json manifest{{"format", "hets-fixtures"},
                        {"version", 1},
                        {"weights_seed", seeds.weights},
                        {"images_seed", seeds.images},
                        {"image_count", seeds.image_count},
                        {"files", {"mnist_cnn.json", "mnist_images.json"}},
                        {"generator", "hets fixtures --out <dir>"}};
    write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

}  // namespace hets
