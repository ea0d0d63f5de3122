// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/optim.hpp"

#include <cmath>

namespace lmdetr {

void Adam::step(ParamRegistry& registry) {
    ++step_;
    double clip_factor = 1.0;
    if (options_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& e : registry.entries()) {
            if (!e.trainable || !e.tensor.defined() || !e.tensor.has_grad()) continue;
            for (double g : e.tensor.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > options_.clip_norm) clip_factor = options_.clip_norm / norm;
    }
    const double t = static_cast<double>(step_);
    const double correction1 = 1.0 - std::pow(options_.beta1, t);
    const double correction2 = 1.0 - std::pow(options_.beta2, t);
    for (auto& e : registry.entries()) {
        if (!e.trainable || !e.tensor.defined() || !e.tensor.has_grad()) continue;
        auto& state = moments_[e.name];
        const auto n = e.tensor.numel();
        if (state.m.empty()) {
            state.m.assign(n, 0.0);
            state.v.assign(n, 0.0);
        }
        const auto grad = e.tensor.grad();
        auto data = e.tensor.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad[i] * clip_factor;
            state.m[i] = options_.beta1 * state.m[i] + (1.0 - options_.beta1) * g;
            state.v[i] = options_.beta2 * state.v[i] + (1.0 - options_.beta2) * g * g;
            const double m_hat = state.m[i] / correction1;
            const double v_hat = state.v[i] / correction2;
            data[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
}

void Adam::restore(std::int64_t step, std::map<std::string, Moments> moments) {
    step_ = step;
    moments_ = std::move(moments);
}

}  // namespace lmdetr
