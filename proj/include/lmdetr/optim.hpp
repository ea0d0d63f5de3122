// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lmdetr/params.hpp"

namespace lmdetr {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global gradient-norm clip over trainable entries; 0 disables.
    double clip_norm = 0.0;
};

// Bias-corrected Adam. Moment buffers are keyed by parameter name and persist
// across step() calls. Frozen entries are never read or written.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    void step(ParamRegistry& registry);

    std::int64_t step_count() const { return step_; }
    const AdamOptions& options() const { return options_; }
    void set_lr(double lr) { options_.lr = lr; }

    // Moment state, exposed for checkpointing.
    struct Moments {
        std::vector<double> m, v;
    };
    const std::map<std::string, Moments>& moments() const { return moments_; }
    void restore(std::int64_t step, std::map<std::string, Moments> moments);

private:
    AdamOptions options_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace lmdetr
