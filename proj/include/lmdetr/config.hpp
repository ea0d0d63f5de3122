// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. On disk this is a JSON object with the sections
// "model", "loss", "optim", "train", "data", "eval" plus a top-level "seed";
// every section is optional and unknown keys are rejected.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmdetr/optim.hpp"
#include "lmdetr/synth.hpp"

namespace lmdetr {

enum class Variant { light, plus, full_train };
enum class FusionKind { add, mul, concat, cross_attention };
// Where the fixed positional encodings enter: the detection transformer's
// attention inputs, or the projected features before the shared encoder.
enum class PositionMode { head, before_up };

const char* to_string(Variant v);
const char* to_string(FusionKind f);
const char* to_string(PositionMode p);
Variant parse_variant(const std::string& s);
FusionKind parse_fusion(const std::string& s);
PositionMode parse_position_mode(const std::string& s);

struct ModelConfig {
    Variant variant = Variant::light;
    FusionKind fusion = FusionKind::add;
    PositionMode position_mode = PositionMode::head;

    // Image stand-in: each grid cell is a patch x patch x channels pixel block.
    std::size_t raster_rows = 16, raster_cols = 16, channels = 3, patch = 2;
    std::size_t image_hidden = 32;
    std::size_t d_backbone_img = 32;

    // Text stand-in: embedding table + frozen transformer layers.
    std::size_t vocab_size = 0;  // 0: taken from the data vocabulary
    std::size_t max_tokens = 32;
    std::size_t d_backbone_txt = 48;
    std::size_t text_layers = 1, text_heads = 4, text_ffn = 96;

    std::size_t d_model = 64;
    std::size_t up_layers = 4, up_heads = 4, up_ffn = 256;
    std::size_t cross_fusion_heads = 1;
    std::size_t plus_heads = 4, plus_ffn = 256;
    double token_init_std = 0.02;

    std::size_t encoder_layers = 2, decoder_layers = 2, head_heads = 4, head_ffn = 256;
    std::size_t num_queries = 16;
    std::size_t d_contrastive = 64;

    bool train_shared_projections = true;
    bool aux_loss = false;  // reserved; per-layer auxiliary losses are not implemented

    std::size_t grid_rows() const { return raster_rows / patch; }
    std::size_t grid_cols() const { return raster_cols / patch; }
    std::size_t patch_width() const { return patch * patch * channels; }
};

struct LossWeights {
    double l1 = 5.0;
    double giou = 2.0;
    double soft_token = 1.0;
    double contrastive = 1.0;
    double temperature = 0.07;
};

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    std::size_t epochs = 0;  // when > 0, overrides steps with epochs * ceil(n_train / batch)
    std::size_t log_every = 100;
    std::size_t warmup_steps = 0;     // linear lr warm-up
    std::size_t lr_drop_step = 0;     // lr x lr_drop_factor after this step; 0 disables
    double lr_drop_factor = 0.1;

    std::size_t total_steps(std::size_t n_train) const;
};

struct EvalConfig {
    double iou_threshold = 0.5;
    double confidence_threshold = 0.0;  // 0.7 reproduces the filtered protocol; 0 disables
    std::vector<std::size_t> ks{1, 5, 10};
};

struct RunConfig {
    std::uint64_t seed = 1;
    ModelConfig model;
    LossWeights loss;
    AdamOptions optim;
    TrainConfig train;
    SplitSpec data;
    EvalConfig eval;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Strict parse; ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

// Checks every invariant before anything is allocated.
void validate(const RunConfig& c);
// Fills vocab_size from the data vocabulary when left at 0.
RunConfig resolved(RunConfig c);

// Default desk-scale run (CPU minutes).
RunConfig desk_config();
// Small widths for finite-difference checks (d_model 16).
RunConfig tiny_config();
// Widths of the published configuration; meant for parameter accounting only.
RunConfig paper_scale_config();

}  // namespace lmdetr
