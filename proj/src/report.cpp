// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/report.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "lmdetr/errors.hpp"
#include "lmdetr/losses.hpp"

namespace lmdetr {

ParamReport param_report(const ParamRegistry& reg) {
    ParamReport r;
    for (const auto& e : reg.entries()) {
        r.rows.push_back({e.name, e.shape, e.count(), e.trainable, e.group});
        switch (e.group) {
        case ParamGroup::trainable_backbone: r.trainable_backbone += e.count(); break;
        case ParamGroup::frozen_backbone: r.frozen_backbone += e.count(); break;
        case ParamGroup::head: r.head += e.count(); break;
        }
        r.grand_total += e.count();
        if (e.trainable) r.trainable_total += e.count();
    }
    return r;
}

ParamReport count_params(const ModelConfig& cfg) {
    const Model model(cfg, 0, ParamRegistry::Mode::shape_only);
    return param_report(model.registry());
}

void to_json(nlohmann::json& j, const ParamReport& r) {
    j = nlohmann::json::object();
    for (const auto& row : r.rows) {
        j["entries"].push_back({{"name", row.name},
                                {"shape", row.shape},
                                {"count", row.count},
                                {"trainable", row.trainable},
                                {"group", to_string(row.group)}});
    }
    j["totals"] = {{"trainable_backbone", r.trainable_backbone},
                   {"frozen_backbone", r.frozen_backbone},
                   {"head", r.head},
                   {"grand_total", r.grand_total},
                   {"trainable_total", r.trainable_total}};
}

GradcheckReport gradcheck(const RunConfig& raw, const GradcheckOptions& opts) {
    const RunConfig cfg = resolved(raw);
    validate(cfg);
    Model model(cfg.model, cfg.seed);
    const Scene scene = generate(cfg.data, opts.scene_index);
    const GroundTruth gt = ground_truth(scene);
    ParamRegistry& reg = model.registry();

    MatchAssignment match;
    {
        Tape tape;
        TapeScope scope(tape);
        const LossReport r = total_loss(model.forward(scene), gt, cfg.loss);
        match = r.match;
        tape.backward(r.total);
    }
    auto loss_at = [&]() { return total_loss(model.forward(scene), gt, cfg.loss, &match).total.item(); };
    auto central = [&](std::span<double> data, std::size_t i, double h) {
        const double saved = data[i];
        data[i] = saved + h;
        const double up = loss_at();
        data[i] = saved - h;
        const double down = loss_at();
        data[i] = saved;
        return (up - down) / (2.0 * h);
    };

    auto richardson = [&](std::span<double> data, std::size_t i, double h) {
        return (4.0 * central(data, i, h / 2.0) - central(data, i, h)) / 3.0;
    };
    // A relu or max/min kink within the stencil spoils one step size but not a
    // much smaller one. Estimates at h and h/10 that agree are accepted;
    // otherwise a third at h/100 is taken and the closer adjacent pair wins.
    auto derivative = [&](std::span<double> data, std::size_t i) {
        const double r1 = richardson(data, i, opts.step);
        const double r2 = richardson(data, i, opts.step / 10.0);
        if (std::abs(r1 - r2) <= 1e-8 * std::max(1.0, std::abs(r2))) return r2;
        const double r3 = richardson(data, i, opts.step / 100.0);
        return std::abs(r2 - r3) < std::abs(r1 - r2) ? r3 : r2;
    };

    GradcheckReport report;
    report.tolerance = opts.tolerance;
    for (auto& e : reg.entries()) {
        if (!e.trainable) continue;
        GradcheckRow row;
        row.name = e.name;
        const std::size_t n = e.tensor.numel();
        const std::size_t take = opts.max_entries == 0 ? n : std::min(n, opts.max_entries);
        const std::vector<double> analytic = e.tensor.has_grad()
                                                 ? std::vector<double>(e.tensor.grad().begin(), e.tensor.grad().end())
                                                 : std::vector<double>(n, 0.0);
        auto data = e.tensor.mutable_data();
        double max_numeric = 0.0;
        for (std::size_t k = 0; k < take; ++k) {
            const std::size_t i = take == n ? k : k * n / take;
            const double numeric = derivative(data, i);
            row.max_abs_analytic = std::max(row.max_abs_analytic, std::abs(analytic[i]));
            max_numeric = std::max(max_numeric, std::abs(numeric));
            row.max_abs_error = std::max(row.max_abs_error, std::abs(analytic[i] - numeric));
            ++row.checked;
        }
        const double scale = std::max({row.max_abs_analytic, max_numeric, 1e-300});
        row.rel_error = row.max_abs_error / scale;
        row.passed = row.rel_error < opts.tolerance;
        if (!row.passed) report.failures.push_back(row.name);
        report.rows.push_back(row);
    }
    report.passed = report.failures.empty();
    return report;
}

void to_json(nlohmann::json& j, const GradcheckReport& r) {
    j = nlohmann::json::object();
    j["tolerance"] = r.tolerance;
    j["passed"] = r.passed;
    j["failures"] = r.failures;
    for (const auto& row : r.rows) {
        j["tensors"].push_back({{"name", row.name},
                                {"checked", row.checked},
                                {"max_abs_analytic", row.max_abs_analytic},
                                {"max_abs_error", row.max_abs_error},
                                {"rel_error", row.rel_error},
                                {"passed", row.passed}});
    }
}

}  // namespace lmdetr
