// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/fusion.hpp"

#include <array>
#include <cmath>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

namespace {

constexpr nn::Placement kTrainableBackbone{true, ParamGroup::trainable_backbone};

void check_token(const Tensor& x, const Tensor& token, const char* what) {
    if (x.rank() != 2 || token.rank() != 1 || token.dim(0) != x.cols()) {
        throw DimensionError(std::string(what) + ": features " + shape_str(x.shape()) + " and token " +
                             shape_str(token.shape()) + " are incompatible");
    }
}

// [n x d] matrix with `token` in every row, differentiable in the token.
Tensor tile_rows(const Tensor& token, std::size_t n) {
    return ops::matmul(Tensor::filled({n, 1}, 1.0), ops::reshape(token, {1, token.dim(0)}));
}

}  // namespace

ModalityTokens ModalityTokens::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    ModalityTokens t;
    t.image = reg.add("modality_token.image", {cfg.d_model}, where.trainable, where.group,
                      Init::normal(cfg.token_init_std));
    t.text = reg.add("modality_token.text", {cfg.d_model}, where.trainable, where.group,
                     Init::normal(cfg.token_init_std));
    return t;
}

Tensor fuse(const Tensor& x, const Tensor& token, FusionKind kind) {
    check_token(x, token, "fuse");
    switch (kind) {
    case FusionKind::add:
        return ops::add(x, token);
    case FusionKind::mul:
        return ops::mul(x, token);
    case FusionKind::concat: {
        const std::array<Tensor, 2> parts{x, tile_rows(token, x.rows())};
        return ops::concat_cols(parts);
    }
    case FusionKind::cross_attention:
        throw ContractError("fuse: cross_attention fusion carries weights; use FusionLayer");
    }
    throw ContractError("fuse: unknown fusion kind");
}

FusionLayer FusionLayer::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    FusionLayer f;
    f.kind = cfg.fusion;
    if (f.kind == FusionKind::concat) {
        f.adapter = nn::Linear::create(reg, "fusion.adapter", 2 * cfg.d_model, cfg.d_model, true, where);
    } else if (f.kind == FusionKind::cross_attention) {
        f.value = nn::Linear::create(reg, "fusion.value", cfg.d_model, cfg.d_model, false, where);
        f.output = nn::Linear::create(reg, "fusion.output", cfg.d_model, cfg.d_model, false, where);
    }
    return f;
}

Tensor FusionLayer::operator()(const Tensor& x, const Tensor& token) const {
    switch (kind) {
    case FusionKind::add:
    case FusionKind::mul:
        return fuse(x, token, kind);
    case FusionKind::concat:
        return adapter(fuse(x, token, kind));
    case FusionKind::cross_attention: {
        check_token(x, token, "fuse");
        Tensor contribution = output(value(ops::reshape(token, {1, token.dim(0)})));
        return ops::add(x, ops::reshape(contribution, {token.dim(0)}));
    }
    }
    throw ContractError("fuse: unknown fusion kind");
}

UPEncoder UPEncoder::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    UPEncoder up;
    up.width = cfg.d_model;
    for (std::size_t i = 0; i < cfg.up_layers; ++i) {
        up.layers.push_back(
            nn::EncoderBlock::create(reg, "up.layer" + std::to_string(i), {cfg.d_model, cfg.up_heads, cfg.up_ffn}, where));
    }
    up.norm = nn::LayerNorm::create(reg, "up.norm", cfg.d_model, where);
    return up;
}

Tensor UPEncoder::operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != width) {
        throw DimensionError("UP encoder expects width " + std::to_string(width) + ", got " + shape_str(x.shape()));
    }
    Tensor h = x;
    for (const auto& layer : layers) h = layer(h);
    return norm(h);
}

Tensor up_forward(const Tensor& x, const UPEncoder& up) { return up(x); }

CrossFusion CrossFusion::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    const std::size_t d = cfg.d_model;
    CrossFusion cf;
    cf.heads = cfg.cross_fusion_heads;
    cf.q_image = nn::Linear::create(reg, "cross_fusion.q_image", d, d, false, where);
    cf.q_text = nn::Linear::create(reg, "cross_fusion.q_text", d, d, false, where);
    cf.v_text = nn::Linear::create(reg, "cross_fusion.v_text", d, d, false, where);
    cf.v_image = nn::Linear::create(reg, "cross_fusion.v_image", d, d, false, where);
    cf.out_image = nn::Linear::create(reg, "cross_fusion.out_image", d, d, false, where);
    cf.out_text = nn::Linear::create(reg, "cross_fusion.out_text", d, d, false, where);
    return cf;
}

CrossFused cross_fuse(const Tensor& image, const Tensor& text, const CrossFusion& cf) {
    if (image.rank() != 2 || text.rank() != 2 || image.cols() != cf.q_image.in || text.cols() != cf.q_text.in) {
        throw DimensionError("cross_fuse: image " + shape_str(image.shape()) + ", text " + shape_str(text.shape()));
    }
    Tensor oq = cf.q_image(image), tq = cf.q_text(text);
    CrossFused out;
    out.image = cf.out_image(nn::attention(oq, tq, cf.v_text(text), cf.heads));
    out.text = cf.out_text(nn::attention(tq, oq, cf.v_image(image), cf.heads));
    return out;
}

std::pair<Tensor, Tensor> cross_attention_weights(const Tensor& image, const Tensor& text, const CrossFusion& cf,
                                                  std::size_t head) {
    if (head >= cf.heads) throw ContractError("cross_attention_weights: head out of range");
    const std::size_t hw = cf.q_image.out / cf.heads;
    Tensor oq = ops::slice_cols(cf.q_image(image), head * hw, hw);
    Tensor tq = ops::slice_cols(cf.q_text(text), head * hw, hw);
    Tensor attn = ops::scale(ops::matmul(oq, ops::transpose(tq)), 1.0 / std::sqrt(static_cast<double>(hw)));
    return {ops::softmax(attn, 1), ops::softmax(ops::transpose(attn), 1)};
}

PlusProjections PlusProjections::create(ParamRegistry& reg, const ModelConfig& cfg, nn::Placement where) {
    PlusProjections p;
    p.p1 = nn::EncoderBlock::create(reg, "plus.p1", {cfg.d_model, cfg.plus_heads, cfg.plus_ffn}, where);
    p.p2 = nn::EncoderBlock::create(reg, "plus.p2", {cfg.d_model, cfg.plus_heads, cfg.plus_ffn}, where);
    return p;
}

std::pair<Tensor, Tensor> plus_project(const Tensor& image, const Tensor& text, const Tensor& image_fused,
                                       const Tensor& text_fused, const PlusProjections& proj) {
    return {proj.p1(ops::add(image_fused, image)), proj.p2(ops::add(text_fused, text))};
}

SharedEncoder SharedEncoder::create(ParamRegistry& reg, const ModelConfig& cfg) {
    SharedEncoder enc;
    enc.variant = cfg.variant;
    enc.position_mode = cfg.position_mode;
    enc.projection = SharedProjection::create(reg, cfg, {cfg.train_shared_projections, ParamGroup::head});
    if (cfg.variant == Variant::full_train) return enc;
    enc.tokens = ModalityTokens::create(reg, cfg, kTrainableBackbone);
    enc.fusion = FusionLayer::create(reg, cfg, kTrainableBackbone);
    if (cfg.variant == Variant::plus) {
        enc.cross = CrossFusion::create(reg, cfg, kTrainableBackbone);
        enc.plus = PlusProjections::create(reg, cfg, kTrainableBackbone);
    }
    enc.up = UPEncoder::create(reg, cfg, kTrainableBackbone);
    return enc;
}

Encoded encode_both(const ImageFeatures& image, const TextFeatures& text, const SharedEncoder& enc) {
    Tensor o = project_to_shared(image.features, Modality::image, enc.projection);
    Tensor t = project_to_shared(text.features, Modality::text, enc.projection);
    if (enc.position_mode == PositionMode::before_up) {
        o = ops::add(o, image.positions);
        t = ops::add(t, text.positions);
    }
    if (enc.variant == Variant::full_train) return {o, t};
    if (enc.variant == Variant::plus) {
        CrossFused f = cross_fuse(o, t, *enc.cross);
        std::tie(o, t) = plus_project(o, t, f.image, f.text, *enc.plus);
    }
    return {enc.up(enc.fusion(o, enc.tokens.image)), enc.up(enc.fusion(t, enc.tokens.text))};
}

}  // namespace lmdetr
