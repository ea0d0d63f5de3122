// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/detection.hpp"

#include <array>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

DetectionHead DetectionHead::create(ParamRegistry& reg, const ModelConfig& cfg) {
    const nn::Placement where{true, ParamGroup::head};
    const nn::BlockShape shape{cfg.d_model, cfg.head_heads, cfg.head_ffn};
    DetectionHead h;
    h.max_tokens = cfg.max_tokens;
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        h.encoder.push_back(nn::EncoderBlock::create(reg, "head.encoder" + std::to_string(i), shape, where));
    }
    h.encoder_norm = nn::LayerNorm::create(reg, "head.encoder_norm", cfg.d_model, where);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        h.decoder.push_back(nn::DecoderBlock::create(reg, "head.decoder" + std::to_string(i), shape, where));
    }
    h.decoder_norm = nn::LayerNorm::create(reg, "head.decoder_norm", cfg.d_model, where);
    h.queries = reg.add("head.queries", {cfg.num_queries, cfg.d_model}, true, ParamGroup::head, Init::normal(1.0));
    h.box1 = nn::Linear::create(reg, "head.box.layer0", cfg.d_model, cfg.d_model, true, where);
    h.box2 = nn::Linear::create(reg, "head.box.layer1", cfg.d_model, cfg.d_model, true, where);
    h.box3 = nn::Linear::create(reg, "head.box.layer2", cfg.d_model, 4, true, where);
    h.token = nn::Linear::create(reg, "head.token", cfg.d_model, cfg.max_tokens + 1, true, where);
    h.contrastive_image =
        nn::Linear::create(reg, "head.contrastive_image", cfg.d_model, cfg.d_contrastive, true, where);
    h.contrastive_text = nn::Linear::create(reg, "head.contrastive_text", cfg.d_model, cfg.d_contrastive, true, where);
    return h;
}

Predictions detect(const Tensor& image, const Tensor& text, const Tensor& image_pos, const Tensor& text_pos,
                   const DetectionHead& head) {
    if (text.rows() > head.max_tokens) {
        throw InputError("detect: " + std::to_string(text.rows()) + " text rows exceed the maximum " +
                         std::to_string(head.max_tokens));
    }
    const std::size_t n_image = image.rows();
    const std::array<Tensor, 2> seq{image, text};
    Tensor memory = ops::concat_rows(seq);
    Tensor pos;
    if (image_pos.defined() && text_pos.defined()) {
        const std::array<Tensor, 2> pos_parts{image_pos, text_pos};
        pos = ops::concat_rows(pos_parts);
    }
    for (const auto& layer : head.encoder) memory = layer(memory, pos);
    memory = head.encoder_norm(memory);

    // The decoder state starts from the query embeddings; an all-zero start
    // would put the first pre-norm at its zero-variance point.
    Tensor h = head.queries;
    for (const auto& layer : head.decoder) h = layer(h, head.queries, memory, pos);
    h = head.decoder_norm(h);

    Predictions p;
    p.boxes = ops::sigmoid(head.box3(ops::relu(head.box2(ops::relu(head.box1(h))))));
    p.token_logits = head.token(h);
    p.object_embed = ops::l2_normalize_rows(head.contrastive_image(h));
    p.token_embed = ops::l2_normalize_rows(head.contrastive_text(ops::slice_rows(memory, n_image, text.rows())));
    return p;
}

std::vector<double> box_confidence(const Predictions& p) {
    Tensor probs = ops::softmax(p.token_logits.detach(), 1);
    std::vector<double> out(p.num_queries());
    for (std::size_t q = 0; q < out.size(); ++q) out[q] = 1.0 - probs.at(q, p.null_slot());
    return out;
}

std::vector<double> phrase_score(const Predictions& p, TokenSpan span) {
    if (span.empty()) throw InputError("phrase_score: empty span");
    if (span.end > p.null_slot()) {
        throw InputError("phrase_score: span end " + std::to_string(span.end) + " outside " +
                         std::to_string(p.null_slot()) + " token slots");
    }
    Tensor probs = ops::softmax(p.token_logits.detach(), 1);
    std::vector<double> out(p.num_queries(), 0.0);
    for (std::size_t q = 0; q < out.size(); ++q) {
        for (std::size_t j = span.begin; j < span.end; ++j) out[q] += probs.at(q, j);
    }
    return out;
}

}  // namespace lmdetr
