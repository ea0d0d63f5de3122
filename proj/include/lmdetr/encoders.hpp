// SPDX-License-Identifier: Apache-2.0
//
// Seeded stand-ins for the pretrained image and text backbones, plus the
// learned projections into the shared d_model space.
//
// With a frozen backbone every stand-in tensor is registered with
// trainable = false, so none of them ever carries a gradient.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lmdetr/config.hpp"
#include "lmdetr/nn.hpp"
#include "lmdetr/synth.hpp"

namespace lmdetr {

enum class Modality { image, text };

struct ImageFeatures {
    Tensor features;   // [cells x d_backbone_img]
    Tensor positions;  // [cells x d_model], fixed sinusoidal
    std::size_t grid_rows = 0, grid_cols = 0;
};

struct TextFeatures {
    Tensor features;  // [tokens x d_backbone_txt]
    std::vector<std::size_t> token_ids;
    Tensor positions;  // [tokens x d_model], fixed sinusoidal
};

// DETR-style 2-D encoding: the first half of the width encodes the row, the
// second half the column, both normalized to [0, 2pi).
Tensor sinusoidal_2d(std::size_t rows, std::size_t cols, std::size_t width);
Tensor sinusoidal_1d(std::size_t length, std::size_t width);

// Two affine + relu layers applied to each cell's raw patch vector.
struct ImageStub {
    nn::Linear layer1, layer2;
    std::size_t raster_rows = 0, raster_cols = 0, channels = 0, patch = 1;
    std::size_t d_model = 0;

    static ImageStub create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
    // Raw [cells x patch*patch*channels] input, values scaled to [0, 1].
    Tensor cells(const Raster& raster) const;
};

// Embedding table, sinusoidal positions and a stack of transformer layers.
struct TextStub {
    Tensor embedding;  // [vocab x d_backbone_txt]
    std::vector<nn::EncoderBlock> layers;
    std::size_t max_tokens = 0, d_model = 0;

    static TextStub create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
};

ImageFeatures encode_image(const Raster& raster, const ImageStub& stub);
ImageFeatures encode_image(const Scene& scene, const ImageStub& stub);
// InputError for out-of-vocabulary ids, an empty caption or more than
// max_tokens tokens.
TextFeatures encode_text(std::span<const std::size_t> tokens, const TextStub& stub);

struct SharedProjection {
    nn::Linear image, text;

    static SharedProjection create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
};

// DimensionError when the input width is not the modality's backbone width.
Tensor project_to_shared(const Tensor& x, Modality which, const SharedProjection& proj);

}  // namespace lmdetr
