// SPDX-License-Identifier: Apache-2.0
//
// Full model: backbone stand-ins, shared encoder and detection head over one
// parameter registry.

#pragma once

#include <cstdint>

#include "lmdetr/config.hpp"
#include "lmdetr/detection.hpp"
#include "lmdetr/encoders.hpp"
#include "lmdetr/fusion.hpp"
#include "lmdetr/params.hpp"
#include "lmdetr/synth.hpp"

namespace lmdetr {

struct ForwardTrace {
    ImageFeatures image;
    TextFeatures text;
    Encoded encoded;
    Predictions predictions;
};

class Model {
public:
    // vocab_size must already be resolved. A shape_only registry supports
    // parameter accounting without allocating any values.
    Model(const ModelConfig& cfg, std::uint64_t seed, ParamRegistry::Mode mode = ParamRegistry::Mode::allocate);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    Predictions forward(const Scene& scene) const;
    ForwardTrace trace(const Scene& scene) const;

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& registry() { return registry_; }
    const ParamRegistry& registry() const { return registry_; }

    const ImageStub& image_stub() const { return image_; }
    const TextStub& text_stub() const { return text_; }
    const SharedEncoder& shared() const { return shared_; }
    const DetectionHead& head() const { return head_; }

private:
    ModelConfig cfg_;
    ParamRegistry registry_;
    ImageStub image_;
    TextStub text_;
    SharedEncoder shared_;
    DetectionHead head_;
};

}  // namespace lmdetr
