// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "diff_harness.hpp"
#include "doctest.h"
#include "hets/nn.hpp"
#include "oracles.hpp"

using namespace hets;
using difftest::uniform;

namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidOperand;
}

std::string message_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

const fs::path kFixtures = HETS_FIXTURE_DIR;

const Model& fixture_model() {
    static const Model m = load_model(kFixtures / "mnist_cnn.json");
    return m;
}

const std::vector<PlainTensor>& fixture_images() {
    static const auto imgs = load_images(kFixtures / "mnist_images.json");
    return imgs;
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "hets_test_nn";
    fs::create_directories(dir);
    return dir;
}

/// Logits by direct convolution and matrix products, written against the file
/// layout rather than the library's evaluation code.
std::vector<double> oracle_forward(const Model& m, const std::vector<double>& image) {
    const auto& conv = std::get<Conv2dLayer>(m.layers[0]);
    const std::size_t taps = conv.kernel_h * conv.kernel_w;
    std::vector<double> x;
    for (std::size_t k = 0; k < conv.channels; ++k) {
        const std::vector<double> kernel(conv.weights.begin() + static_cast<std::ptrdiff_t>(k * taps),
                                         conv.weights.begin() + static_cast<std::ptrdiff_t>((k + 1) * taps));
        for (double v : oracle::conv2d_direct(image, m.input_h, m.input_w, kernel, conv.kernel_h, conv.kernel_w,
                                              conv.stride)) {
            x.push_back(v + conv.bias[k]);
        }
    }
    for (std::size_t i = 1; i < m.layers.size(); ++i) {
        if (std::holds_alternative<SquareLayer>(m.layers[i])) {
            for (auto& v : x) {
                v = v * v;
            }
        } else {
            const auto& l = std::get<LinearLayer>(m.layers[i]);
            x = oracle::vec_mat(x, l.weights, l.out);
            for (std::size_t o = 0; o < l.out; ++o) {
                x[o] += l.bias[o];
            }
        }
    }
    return x;
}

/// 6x6 -> conv(2, 3x3) -> square -> 32x12 -> square -> 12x4; fits test-4096 one layer at a time.
Model small_model(Prng& rng) {
    Model m;
    m.input_h = 6;
    m.input_w = 6;
    m.layers = {Conv2dLayer{2, 3, 3, 1, uniform(rng, 18, -0.5, 0.5), uniform(rng, 2, -0.2, 0.2)}, SquareLayer{},
                LinearLayer{32, 12, uniform(rng, 384, -0.3, 0.3), uniform(rng, 12, -0.2, 0.2)}, SquareLayer{},
                LinearLayer{12, 4, uniform(rng, 48, -0.5, 0.5), uniform(rng, 4, -0.2, 0.2)}};
    return m;
}

SchemeParams mnist_with_primes(std::size_t middle) {
    std::vector<int> bits{31};
    bits.insert(bits.end(), middle, 25);
    return make_params("mnist-short", 8192, bits, 0x1.0p21);
}

}  // namespace

TEST_CASE("model files round trip") {
    Prng rng(1);
    const Model m = small_model(rng);
    const fs::path path = scratch_dir() / "small.json";
    save_model(m, path);
    const Model back = load_model(path);
    CHECK(back == m);
    CHECK(model_to_json(back) == model_to_json(m));
    CHECK(message_of([] { (void)load_model("/nonexistent/model.json"); }).find("/nonexistent/model.json") !=
          std::string::npos);
    CHECK(code_of([] { (void)load_model("/nonexistent/model.json"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { (void)model_from_json("{\"format\":\"hets-model\""); }) == ErrorCode::ParseError);
    CHECK(code_of([] { (void)model_from_json(R"({"format":"hets-model","version":2,"input_shape":[1,1],"layers":[]})"); }) ==
          ErrorCode::ParseError);
    CHECK(code_of([] {
              (void)model_from_json(R"({"format":"hets-model","version":1,"input_shape":[2,2],"layers":[{"type":"pool"}]})");
          }) == ErrorCode::ParseError);
    CHECK(code_of([&] { save_model(m, "/nonexistent/dir/model.json"); }) == ErrorCode::IoError);
}

TEST_CASE("shape validation names the layer") {
    Prng rng(2);
    Model m = small_model(rng);
    std::get<LinearLayer>(m.layers[4]).in = 11;
    std::get<LinearLayer>(m.layers[4]).weights.resize(44);
    CHECK(code_of([&] { m.validate(); }) == ErrorCode::ShapeError);
    CHECK(message_of([&] { m.validate(); }).find("layer 4 (linear)") != std::string::npos);

    Model late = small_model(rng);
    late.layers.push_back(late.layers.front());
    CHECK(message_of([&] { late.validate(); }).find("layer 5 (conv2d)") != std::string::npos);

    Model untiled = small_model(rng);
    untiled.input_h = 7;
    std::get<Conv2dLayer>(untiled.layers[0]).stride = 2;  // (7 - 3) % 2 == 0 but (6 - 3) % 2 != 0
    CHECK(code_of([&] { untiled.validate(); }) == ErrorCode::ShapeError);
}

TEST_CASE("fixture architecture and depth") {
    const Model& m = fixture_model();
    REQUIRE(m.layers.size() == 5);
    const auto& conv = std::get<Conv2dLayer>(m.layers[0]);
    CHECK(conv.channels == 4);
    CHECK(conv.kernel_h == 7);
    CHECK(conv.kernel_w == 7);
    CHECK(conv.stride == 3);
    CHECK(std::holds_alternative<SquareLayer>(m.layers[1]));
    CHECK(std::get<LinearLayer>(m.layers[2]).in == 256);
    CHECK(std::get<LinearLayer>(m.layers[2]).out == 64);
    CHECK(std::holds_alternative<SquareLayer>(m.layers[3]));
    CHECK(std::get<LinearLayer>(m.layers[4]).in == 64);
    CHECK(std::get<LinearLayer>(m.layers[4]).out == 10);
    CHECK(m.output_sizes() == std::vector<std::size_t>{256, 256, 64, 64, 10});
    // conv 2 (product, mask) + square + FC1 + square + FC2
    CHECK(m.depth() == 2 + 1 + 1 + 1 + 1);
    CHECK(m.depth() <= profile_params("mnist-8192").top_level());
    CHECK(stage_names(m) == std::vector<std::string>{"Convolutional layer evaluation", "First activation(square)",
                                                      "FC1", "Second activation(square)", "FC2"});
}

TEST_CASE("fixtures regenerate from the manifest seeds") {
    std::ifstream in(kFixtures / "manifest.json");
    REQUIRE(in);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto find_u64 = [&](const std::string& key) {
        const auto pos = text.find("\"" + key + "\"");
        REQUIRE(pos != std::string::npos);
        return std::stoull(text.substr(text.find(':', pos) + 1));
    };
    FixtureSeeds seeds;
    seeds.weights = find_u64("weights_seed");
    seeds.images = find_u64("images_seed");
    seeds.image_count = find_u64("image_count");
    const auto images = make_fixture_images(seeds.images, seeds.image_count);
    CHECK(images == fixture_images());
    CHECK(make_fixture_model(seeds.weights, images) == fixture_model());
}

TEST_CASE("fixture activations stay in [-10, 10]") {
    const Model& m = fixture_model();
    double peak = 0;
    for (const auto& img : fixture_images()) {
        CHECK(img.shape == std::vector<std::size_t>{28, 28});
        PlainTensor x = img;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            x = plain_layer(m, i, x);
            for (double v : x.data) {
                peak = std::max(peak, std::abs(v));
            }
        }
    }
    CHECK(peak <= 10.0);
    CHECK(peak > 1.0);
}

TEST_CASE("plain_forward against the direct oracle") {
    const Model& m = fixture_model();
    for (std::size_t i = 0; i < fixture_images().size(); ++i) {
        const auto& img = fixture_images()[i];
        const auto got = plain_forward(m, img);
        CHECK(got.size() == 10);
        CHECK(oracle::max_abs_diff(got.data, oracle_forward(m, img.data)) < 1e-9);
    }

    Model zero = m;
    for (auto& layer : zero.layers) {
        std::visit([](auto& l) {
            if constexpr (!std::is_same_v<std::decay_t<decltype(l)>, SquareLayer>) {
                std::fill(l.bias.begin(), l.bias.end(), 0.0);
            }
        }, layer);
    }
    const auto z = plain_forward(zero, PlainTensor::matrix(std::vector<double>(784, 0.0), 28, 28));
    CHECK(z.data == std::vector<double>(10, 0.0));

    CHECK(code_of([&] { (void)plain_forward(m, PlainTensor::matrix(std::vector<double>(729, 0.0), 27, 27)); }) ==
          ErrorCode::ShapeError);
}

TEST_CASE("prepare_input lays out the windows") {
    const Model& m = fixture_model();
    Backend mock(Context::structural(profile_params("mnist-8192")), BackendKind::Mock);
    const auto ev = prepare_input(mock, m, fixture_images()[0]);
    REQUIRE(ev.layout.has_value());
    CHECK(*ev.layout == WindowLayout{64, 49, 64});
    CHECK(ev.length == 64 * 64);
    CHECK(ev.length == mock.slot_count());
    CHECK(ev.level() == mock.top_level());
    const auto cols = im2col_encode(fixture_images()[0], 7, 7, 3);
    CHECK(mock.decrypt(ev.ct) == cols.flat);
    CHECK(code_of([&] { (void)prepare_input(mock, m, PlainTensor::matrix(std::vector<double>(729, 0.0), 27, 27)); }) ==
          ErrorCode::ShapeError);

    // a model without convolution gets a replicated flat vector
    Model flat;
    flat.input_h = 2;
    flat.input_w = 3;
    flat.layers = {LinearLayer{6, 2, std::vector<double>(12, 1.0), {0.0, 0.0}}};
    const auto fv = prepare_input(mock, flat, PlainTensor::matrix({1, 2, 3, 4, 5, 6}, 2, 3));
    CHECK(!fv.layout);
    CHECK(fv.replicas == mock.slot_count() / 6);
}

TEST_CASE("each layer matches its plain counterpart at the test profile") {
    ContextOptions opts;
    opts.seed = 31;
    Prng rng(32);
    const Model m = small_model(rng);
    opts.workload_steps = m.rotation_steps();
    Backend b(Context::create("test-4096", opts), BackendKind::Real, 33);
    const auto sizes = m.output_sizes();
    for (std::size_t layer = 0; layer < m.layers.size(); ++layer) {
        double worst = 0;
        for (int trial = 0; trial < 50; ++trial) {
            EncryptedVector in;
            PlainTensor plain_in;
            if (layer == 0) {
                plain_in = PlainTensor::matrix(uniform(rng, 36, 0, 1), 6, 6);
                in = prepare_input(b, m, plain_in);
            } else {
                plain_in = PlainTensor::vector(uniform(rng, sizes[layer - 1], -1, 1));
                in = encrypt_vector(b, plain_in, true);
            }
            const auto got = decrypt_vector(b, encrypted_layer(b, m, layer, in));
            worst = std::max(worst, oracle::max_abs_diff(got.data, plain_layer(m, layer, plain_in).data));
        }
        INFO("layer " << layer);
        // element-wise bound for squares, dot/conv bound otherwise
        CHECK(worst < (std::holds_alternative<SquareLayer>(m.layers[layer]) ? 1e-3 : 1e-2));
    }
}

TEST_CASE("MNIST level trace and budget") {
    const Model& m = fixture_model();
    ContextOptions opts;
    opts.workload_steps = m.rotation_steps();
    Backend b(Context::structural(profile_params("mnist-8192"), opts), BackendKind::Mock);
    std::vector<int> consumed;
    const auto in = prepare_input(b, m, fixture_images()[0]);
    const auto out = encrypted_forward(b, m, in, [&](const LayerEvent& e) {
        consumed.push_back(e.level_in - e.level_out);
    });
    CHECK(consumed == std::vector<int>{2, 1, 1, 1, 1});
    int total = 0;
    for (int c : consumed) {
        total += c;
    }
    CHECK(total == m.depth());
    CHECK(out.level() == 0);
    CHECK(oracle::max_abs_diff(decrypt_vector(b, out).data, plain_forward(m, fixture_images()[0]).data) < 1e-9);
    CHECK(code_of([&] { (void)encrypted_forward(b, m, out); }) == ErrorCode::LevelExhausted);

    // one prime fewer: FC2 has no level left
    Backend shorter(Context::structural(mnist_with_primes(6), opts), BackendKind::Mock);
    std::vector<std::string> done;
    const auto in7 = prepare_input(shorter, m, fixture_images()[0]);
    CHECK(code_of([&] {
              (void)encrypted_forward(shorter, m, in7, [&](const LayerEvent& e) { done.push_back(e.stage); });
          }) == ErrorCode::LevelExhausted);
    CHECK(done == std::vector<std::string>{"Convolutional layer evaluation", "First activation(square)", "FC1",
                                           "Second activation(square)"});
}

TEST_CASE("encrypted MNIST forward on one fixture image") {
    const Model& m = fixture_model();
    ContextOptions opts;
    opts.seed = 41;
    opts.workload_steps = m.rotation_steps();
    Backend b(Context::create("mnist-8192", opts), BackendKind::Real, 42);
    const auto& img = fixture_images()[0];
    const auto got = decrypt_vector(b, encrypted_forward(b, m, prepare_input(b, m, img)));
    const auto want = plain_forward(m, img);
    CHECK(oracle::max_abs_diff(got.data, want.data) < 0.5);
    CHECK(argmax(got) == argmax(want));
}
