// SPDX-License-Identifier: Apache-2.0
//
// Modality tokens, the fusion operator, the shared Universal Projection (UP)
// encoder and the cross-fusion stage of the Plus variant.
//
//   light:  O_UP = UP(proj(O) (x) t_image),  T_UP = UP(proj(T) (x) t_text)
//   plus:   O_F, T_F = cross_fuse(O, T)
//           O_UP = UP(P1(O_F + O) (x) t_image),  T_UP = UP(P2(T_F + T) (x) t_text)

#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "lmdetr/config.hpp"
#include "lmdetr/encoders.hpp"
#include "lmdetr/nn.hpp"

namespace lmdetr {

struct ModalityTokens {
    Tensor image, text;  // [d_model] each

    static ModalityTokens create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
    const Tensor& operator[](Modality m) const { return m == Modality::image ? image : text; }
};

// add/mul broadcast the token over rows, concat appends it to every row
// (n x 2d). cross_attention needs weights and goes through FusionLayer.
Tensor fuse(const Tensor& x, const Tensor& token, FusionKind kind);

// The fusion operator plus whatever weights its kind needs: a 2d -> d adapter
// for concat, value/output maps for cross_attention. Attention from a row to
// a single key has weight 1, so the cross_attention result is
// x + (t W_v) W_o for every row.
struct FusionLayer {
    FusionKind kind = FusionKind::add;
    nn::Linear adapter;
    nn::Linear value, output;

    static FusionLayer create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
    // Always d_model wide.
    Tensor operator()(const Tensor& x, const Tensor& token) const;
};

// Pre-norm transformer encoder with a final layer norm and no positional
// input. One weight set serves both modalities.
struct UPEncoder {
    std::vector<nn::EncoderBlock> layers;
    nn::LayerNorm norm;
    std::size_t width = 0;

    static UPEncoder create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
    Tensor operator()(const Tensor& x) const;
};

Tensor up_forward(const Tensor& x, const UPEncoder& up);

struct CrossFusion {
    nn::Linear q_image, q_text, v_text, v_image, out_image, out_text;  // d x d, no bias
    std::size_t heads = 1;

    static CrossFusion create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
};

struct CrossFused {
    Tensor image, text;  // O_F [N_img x d], T_F [L_tok x d]
};

// Attn = O^(q) (T^(q))^T / sqrt(d / heads);
// O_F = softmax(Attn) T^(v) W_outO,  T_F = softmax(Attn^T) O^(v) W_outT.
CrossFused cross_fuse(const Tensor& image, const Tensor& text, const CrossFusion& cf);

// softmax(Attn) and softmax(Attn^T) for one head.
std::pair<Tensor, Tensor> cross_attention_weights(const Tensor& image, const Tensor& text, const CrossFusion& cf,
                                                  std::size_t head = 0);

struct PlusProjections {
    nn::EncoderBlock p1, p2;

    static PlusProjections create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where);
};

// (P1(O_F + O), P2(T_F + T))
std::pair<Tensor, Tensor> plus_project(const Tensor& image, const Tensor& text, const Tensor& image_fused,
                                       const Tensor& text_fused, const PlusProjections& proj);

// Everything between the backbone features and the detection transformer.
struct SharedEncoder {
    Variant variant = Variant::light;
    PositionMode position_mode = PositionMode::head;
    SharedProjection projection;
    ModalityTokens tokens;  // undefined for full_train
    FusionLayer fusion;
    UPEncoder up;
    std::optional<CrossFusion> cross;
    std::optional<PlusProjections> plus;

    static SharedEncoder create(ParamRegistry& reg, const ModelConfig& cfg);
};

struct Encoded {
    Tensor image, text;  // O_UP [N_img x d], T_UP [L_tok x d]
};

Encoded encode_both(const ImageFeatures& image, const TextFeatures& text, const SharedEncoder& enc);

}  // namespace lmdetr
