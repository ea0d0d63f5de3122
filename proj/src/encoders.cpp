// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/encoders.hpp"

#include <cmath>
#include <numbers>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

namespace {

void fill_sinusoid(double* out, double position, std::size_t width) {
    for (std::size_t i = 0; i < width; i += 2) {
        const double freq = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(width));
        out[i] = std::sin(position / freq);
        if (i + 1 < width) out[i + 1] = std::cos(position / freq);
    }
}

}  // namespace

Tensor sinusoidal_2d(std::size_t rows, std::size_t cols, std::size_t width) {
    const std::size_t half = width / 2;
    std::vector<double> values(rows * cols * width, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double* row = values.data() + (r * cols + c) * width;
            fill_sinusoid(row, (static_cast<double>(r) + 0.5) / static_cast<double>(rows) * two_pi, half);
            fill_sinusoid(row + half, (static_cast<double>(c) + 0.5) / static_cast<double>(cols) * two_pi,
                          width - half);
        }
    }
    return Tensor({rows * cols, width}, std::move(values));
}

Tensor sinusoidal_1d(std::size_t length, std::size_t width) {
    std::vector<double> values(length * width, 0.0);
    for (std::size_t p = 0; p < length; ++p) fill_sinusoid(values.data() + p * width, static_cast<double>(p), width);
    return Tensor({length, width}, std::move(values));
}

ImageStub ImageStub::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    ImageStub s;
    s.raster_rows = cfg.raster_rows;
    s.raster_cols = cfg.raster_cols;
    s.channels = cfg.channels;
    s.patch = cfg.patch;
    s.d_model = cfg.d_model;
    s.layer1 = nn::Linear::create(reg, "image_backbone.layer1", cfg.patch_width(), cfg.image_hidden, true, where,
                                  Init::he_normal());
    s.layer2 = nn::Linear::create(reg, "image_backbone.layer2", cfg.image_hidden, cfg.d_backbone_img, true, where,
                                  Init::he_normal());
    return s;
}

Tensor ImageStub::cells(const Raster& raster) const {
    if (raster.rows != raster_rows || raster.cols != raster_cols || raster.channels != channels) {
        throw DimensionError("image backbone expects a " + std::to_string(raster_rows) + "x" +
                             std::to_string(raster_cols) + "x" + std::to_string(channels) + " raster, got " +
                             std::to_string(raster.rows) + "x" + std::to_string(raster.cols) + "x" +
                             std::to_string(raster.channels));
    }
    const std::size_t grid_rows = raster_rows / patch, grid_cols = raster_cols / patch;
    const std::size_t width = patch * patch * channels;
    std::vector<double> values(grid_rows * grid_cols * width);
    std::size_t k = 0;
    for (std::size_t gr = 0; gr < grid_rows; ++gr) {
        for (std::size_t gc = 0; gc < grid_cols; ++gc) {
            for (std::size_t dy = 0; dy < patch; ++dy) {
                for (std::size_t dx = 0; dx < patch; ++dx) {
                    for (std::size_t ch = 0; ch < channels; ++ch) {
                        values[k++] = raster.at(gr * patch + dy, gc * patch + dx, ch) / 255.0;
                    }
                }
            }
        }
    }
    return Tensor({grid_rows * grid_cols, width}, std::move(values));
}

ImageFeatures encode_image(const Raster& raster, const ImageStub& stub) {
    ImageFeatures f;
    f.grid_rows = stub.raster_rows / stub.patch;
    f.grid_cols = stub.raster_cols / stub.patch;
    f.features = ops::relu(stub.layer2(ops::relu(stub.layer1(stub.cells(raster)))));
    f.positions = sinusoidal_2d(f.grid_rows, f.grid_cols, stub.d_model);
    return f;
}

ImageFeatures encode_image(const Scene& scene, const ImageStub& stub) { return encode_image(scene.raster, stub); }

TextStub TextStub::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    TextStub s;
    s.max_tokens = cfg.max_tokens;
    s.d_model = cfg.d_model;
    s.embedding = reg.add("text_backbone.embedding", {cfg.vocab_size, cfg.d_backbone_txt}, where.trainable,
                          where.group, Init::normal(1.0));
    for (std::size_t i = 0; i < cfg.text_layers; ++i) {
        s.layers.push_back(nn::EncoderBlock::create(reg, "text_backbone.layer" + std::to_string(i),
                                                    {cfg.d_backbone_txt, cfg.text_heads, cfg.text_ffn}, where));
    }
    return s;
}

TextFeatures encode_text(std::span<const std::size_t> tokens, const TextStub& stub) {
    if (tokens.empty()) throw InputError("encode_text: empty caption");
    if (tokens.size() > stub.max_tokens) {
        throw InputError("encode_text: caption of " + std::to_string(tokens.size()) + " tokens exceeds the maximum " +
                         std::to_string(stub.max_tokens));
    }
    const std::size_t vocab = stub.embedding.dim(0);
    for (auto id : tokens) {
        if (id >= vocab) {
            throw InputError("encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
    }
    const std::size_t width = stub.embedding.dim(1);
    Tensor x = ops::add(ops::gather_rows(stub.embedding, tokens), sinusoidal_1d(tokens.size(), width));
    for (const auto& layer : stub.layers) x = layer(x);
    TextFeatures f;
    f.features = x;
    f.token_ids.assign(tokens.begin(), tokens.end());
    f.positions = sinusoidal_1d(tokens.size(), stub.d_model);
    return f;
}

SharedProjection SharedProjection::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    SharedProjection p;
    p.image = nn::Linear::create(reg, "shared_proj.image", cfg.d_backbone_img, cfg.d_model, true, where);
    p.text = nn::Linear::create(reg, "shared_proj.text", cfg.d_backbone_txt, cfg.d_model, true, where);
    return p;
}

Tensor project_to_shared(const Tensor& x, Modality which, const SharedProjection& proj) {
    const auto& layer = which == Modality::image ? proj.image : proj.text;
    if (x.rank() != 2 || x.cols() != layer.in) {
        throw DimensionError(std::string("project_to_shared: ") + (which == Modality::image ? "image" : "text") +
                             " input must be " + std::to_string(layer.in) + " wide, got " + shape_str(x.shape()));
    }
    return layer(x);
}

}  // namespace lmdetr
