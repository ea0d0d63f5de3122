// SPDX-License-Identifier: Apache-2.0
//
// DETR-style encoder-decoder over concat(O_UP, T_UP) with object queries,
// a box head, a soft-token head and the two contrastive projections.

#pragma once

#include <cstddef>
#include <vector>

#include "lmdetr/config.hpp"
#include "lmdetr/nn.hpp"
#include "lmdetr/synth.hpp"

namespace lmdetr {

struct Predictions {
    Tensor boxes;           // [Q x 4] (cx, cy, w, h) in (0, 1)
    Tensor token_logits;    // [Q x (L + 1)], last column is the no-object slot
    Tensor object_embed;    // [Q x d_contrastive], unit rows
    Tensor token_embed;     // [L_tok x d_contrastive], unit rows

    std::size_t num_queries() const { return boxes.rows(); }
    std::size_t null_slot() const { return token_logits.cols() - 1; }
};

struct DetectionHead {
    std::vector<nn::EncoderBlock> encoder;
    nn::LayerNorm encoder_norm;
    std::vector<nn::DecoderBlock> decoder;
    nn::LayerNorm decoder_norm;
    Tensor queries;  // [Q x d_model], decoder start state and query positions
    nn::Linear box1, box2, box3;
    nn::Linear token;
    nn::Linear contrastive_image, contrastive_text;
    std::size_t max_tokens = 0;

    static DetectionHead create(ParamRegistry& reg, const ModelConfig& cfg);
};

// Positions are added to attention queries and keys when defined.
// InputError when text has more than max_tokens rows.
Predictions detect(const Tensor& image, const Tensor& text, const Tensor& image_pos, const Tensor& text_pos,
                   const DetectionHead& head);

// 1 - P(no object) per query.
std::vector<double> box_confidence(const Predictions& p);
// Softmax mass on the span's positions per query. InputError for an empty
// span or one reaching past the token slots.
std::vector<double> phrase_score(const Predictions& p, TokenSpan span);

}  // namespace lmdetr
