// SPDX-License-Identifier: Apache-2.0
//
// Parameter accounting and finite-difference gradient checking.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmdetr/config.hpp"
#include "lmdetr/model.hpp"

namespace lmdetr {

struct ParamReport {
    struct Row {
        std::string name;
        Shape shape;
        std::size_t count = 0;
        bool trainable = false;
        ParamGroup group = ParamGroup::head;
    };
    std::vector<Row> rows;
    std::size_t trainable_backbone = 0, frozen_backbone = 0, head = 0, grand_total = 0, trainable_total = 0;
};

ParamReport param_report(const ParamRegistry& reg);
// Shape-only build; nothing is allocated.
ParamReport count_params(const ModelConfig& cfg);
void to_json(nlohmann::json& j, const ParamReport& r);

struct GradcheckOptions {
    std::size_t max_entries = 32;  // per tensor, evenly spaced; 0 checks every entry
    double step = 1e-4;            // Richardson-combined central differences, refined near kinks
    double tolerance = 1e-5;
    std::size_t scene_index = 0;
};

struct GradcheckRow {
    std::string name;
    std::size_t checked = 0;
    double max_abs_analytic = 0.0;
    double max_abs_error = 0.0;
    double rel_error = 0.0;  // max|a - n| / max(|a|_inf, |n|_inf)
    bool passed = false;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows;  // trainable tensors only
    double tolerance = 0.0;
    bool passed = false;
    std::vector<std::string> failures;
};

// Matching is computed once at the initial weights and held fixed.
GradcheckReport gradcheck(const RunConfig& cfg, const GradcheckOptions& opts = {});
void to_json(nlohmann::json& j, const GradcheckReport& r);

}  // namespace lmdetr
