// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/model.hpp"

#include "lmdetr/errors.hpp"

namespace lmdetr {

Model::Model(const ModelConfig& cfg, std::uint64_t seed, ParamRegistry::Mode mode) : cfg_(cfg), registry_(seed, mode) {
    if (cfg.vocab_size == 0) throw ConfigError("model: vocab_size must be resolved before construction");
    const nn::Placement backbone = cfg.variant == Variant::full_train
                                       ? nn::Placement{true, ParamGroup::trainable_backbone}
                                       : nn::Placement{false, ParamGroup::frozen_backbone};
    image_ = ImageStub::create(registry_, cfg, backbone);
    text_ = TextStub::create(registry_, cfg, backbone);
    shared_ = SharedEncoder::create(registry_, cfg);
    head_ = DetectionHead::create(registry_, cfg);
}

ForwardTrace Model::trace(const Scene& scene) const {
    if (registry_.mode() == ParamRegistry::Mode::shape_only) {
        throw ContractError("model: forward on a shape-only registry");
    }
    ForwardTrace t;
    t.image = encode_image(scene, image_);
    t.text = encode_text(scene.tokens, text_);
    t.encoded = encode_both(t.image, t.text, shared_);
    const bool head_pos = cfg_.position_mode == PositionMode::head;
    t.predictions = detect(t.encoded.image, t.encoded.text, head_pos ? t.image.positions : Tensor(),
                           head_pos ? t.text.positions : Tensor(), head_);
    return t;
}

Predictions Model::forward(const Scene& scene) const { return trace(scene).predictions; }

}  // namespace lmdetr
