// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "hets/tensors.hpp"

namespace hets {

/// Im2col convolution; weights are channels x kernel_h x kernel_w row-major.
struct Conv2dLayer {
    std::size_t channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::vector<double> weights;
    std::vector<double> bias;  // one per channel

    bool operator==(const Conv2dLayer&) const = default;
};

struct SquareLayer {
    bool operator==(const SquareLayer&) const = default;
};

/// y = x * W + b with W stored in x out row-major.
struct LinearLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    bool operator==(const LinearLayer&) const = default;
};

using Layer = std::variant<Conv2dLayer, SquareLayer, LinearLayer>;

/// Levels a layer consumes: conv 2 (product, mask), square 1, linear 1.
int layer_depth(const Layer& layer);
std::string layer_type(const Layer& layer);

struct Model {
    std::size_t input_h = 0;
    std::size_t input_w = 0;
    std::vector<Layer> layers;

    /// ShapeError naming the offending layer index.
    void validate() const;
    /// Sum of the per-layer depths.
    int depth() const;
    /// Flat output size of each layer.
    std::vector<std::size_t> output_sizes() const;
    /// Rotation steps worth dedicated Galois keys for this model.
    std::vector<int> rotation_steps() const;

    bool operator==(const Model&) const = default;
};

/// Row labels used by the timing breakdown: "Convolutional layer evaluation",
/// "First activation(square)", "FC1", ...
std::vector<std::string> stage_names(const Model& model);

std::string model_to_json(const Model& model);
/// ParseError on malformed text (the label names the source), ShapeError from validate().
Model model_from_json(const std::string& text, const std::string& label = "<memory>");
Model load_model(const std::filesystem::path& path);
/// IoError when the file cannot be written.
void save_model(const Model& model, const std::filesystem::path& path);

/// Plain float evaluation of a single layer on a flat input (image for conv).
PlainTensor plain_layer(const Model& model, std::size_t index, const PlainTensor& input);
PlainTensor plain_forward(const Model& model, const PlainTensor& image);

/// im2col + encryption for a conv-first model, replicated flat encryption otherwise.
EncryptedVector prepare_input(Backend& b, const Model& model, const PlainTensor& image);

/// Encrypted evaluation of one layer. A conv layer followed by further layers
/// also replicates its output so the next linear layer has rotation margin.
EncryptedVector encrypted_layer(const Backend& b, const Model& model, std::size_t index, const EncryptedVector& input);

struct LayerEvent {
    std::size_t index = 0;
    std::string stage;
    int level_in = 0;
    int level_out = 0;
    double millis = 0.0;
};

using LayerObserver = std::function<void(const LayerEvent&)>;

EncryptedVector encrypted_forward(const Backend& b, const Model& model, const EncryptedVector& input,
                                  const LayerObserver& observer = {});

std::size_t argmax(const PlainTensor& logits);

// ---- fixtures -------------------------------------------------------------

struct FixtureSeeds {
    uint64_t weights = 2021;
    uint64_t images = 7;
    std::size_t image_count = 20;
};

/// 28x28 digit-like stroke images with values in [0, 1].
std::vector<PlainTensor> make_fixture_images(uint64_t seed, std::size_t count);

/// The 28x28 -> conv(4, 7x7, stride 3) -> square -> 256x64 -> square -> 64x10
/// network with seeded weights, each layer rescaled so that its largest
/// activation over the calibration images hits a fixed target.
Model make_fixture_model(uint64_t seed, const std::vector<PlainTensor>& calibration);

std::string images_to_json(const std::vector<PlainTensor>& images);
std::vector<PlainTensor> images_from_json(const std::string& text, const std::string& label = "<memory>");
std::vector<PlainTensor> load_images(const std::filesystem::path& path);
void save_images(const std::vector<PlainTensor>& images, const std::filesystem::path& path);

/// Writes mnist_cnn.json, mnist_images.json and manifest.json into dir.
void write_fixtures(const std::filesystem::path& dir, const FixtureSeeds& seeds = {});

}  // namespace hets
