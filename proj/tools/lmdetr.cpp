// SPDX-License-Identifier: Apache-2.0
//
// lmdetr synth | train | eval | count-params | gradcheck
//
// Exit status: 0 on success, 1 when a check fails (gradcheck, freeze audit,
// non-finite loss), 2 on bad arguments, configs or input files.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "lmdetr/checkpoint.hpp"
#include "lmdetr/config.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/metrics.hpp"
#include "lmdetr/model.hpp"
#include "lmdetr/report.hpp"
#include "lmdetr/synth.hpp"
#include "lmdetr/train.hpp"

namespace fs = std::filesystem;
using namespace lmdetr;

namespace {

struct Common {
    std::string config;
    std::string preset = "desk";
    std::optional<std::uint64_t> seed;
    std::string out_dir = "runs/latest";
    std::string checkpoint;
};

RunConfig load(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) {
        cfg = load_config(c.config);
    } else if (c.preset == "desk") {
        cfg = desk_config();
    } else if (c.preset == "tiny") {
        cfg = tiny_config();
    } else if (c.preset == "paper") {
        cfg = paper_scale_config();
    } else {
        throw ConfigError("unknown preset '" + c.preset + "' (desk, tiny, paper)");
    }
    if (c.seed) cfg.seed = *c.seed;
    cfg = resolved(cfg);
    validate(cfg);
    return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void print_metrics(const MetricsReport& m) {
    fmt::print("phrases {}\n", m.phrases);
    for (const auto& [k, v] : m.recall) fmt::print("recall@{:<3} {:.4f}\n", k, v);
    for (const auto& [k, v] : m.precision) fmt::print("P@{:<8} {:.4f}\n", k, v);
    fmt::print("mean IoU(top-1) {:.4f}\n", m.mean_iou_top1);
    for (const auto& [t, v] : m.top1_hit_rate) fmt::print("Pr@{:.1f}      {:.4f}\n", t, v);
}

int cmd_synth(const Common& c) {
    const RunConfig cfg = load(c);
    const fs::path dir = c.out_dir;
    fs::create_directories(dir);
    write_dataset(dir / "train.jsonl", cfg.data, generate_split(cfg.data, Split::train));
    write_dataset(dir / "val.jsonl", cfg.data, generate_split(cfg.data, Split::val));
    make_vocabulary(cfg.data).save(dir / "vocab.txt");
    fmt::print("wrote {} train and {} val scenes to {}\n", cfg.data.n_train, cfg.data.n_val, dir.string());
    return 0;
}

int cmd_train(const Common& c) {
    const RunConfig cfg = load(c);
    const fs::path dir = c.out_dir;
    fs::create_directories(dir);
    save_config(dir / "config.json", cfg);

    Model model(cfg.model, cfg.seed);
    Adam adam(cfg.optim);
    if (!c.checkpoint.empty()) {
        const fs::path ckpt = c.checkpoint;
        load_checkpoint(ckpt, model.registry());
        const fs::path opt = ckpt.parent_path() / "optimizer.ckpt";
        if (fs::exists(opt)) load_optimizer(opt, adam);
        fmt::print("resuming from {} at step {}\n", ckpt.string(), adam.step_count());
    }
    const auto scenes = generate_split(cfg.data, Split::train);
    TrainOptions opts;
    opts.out_dir = dir;
    opts.on_log = [](const StepLog& l) {
        fmt::print("step {:>5}  total {:.5f}  l1 {:.4f}  giou {:.4f}  tok {:.4f}  con {:.4f}  lr {:.2e}\n", l.step,
                   l.total, l.l1, l.giou, l.soft_token, l.contrastive, l.lr);
        std::fflush(stdout);
    };
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = train(model, adam, scenes, cfg, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fmt::print("trained {} steps in {:.1f}s; freeze audit clean over {} frozen tensors ({} audits)\n",
               r.curve.size(), secs, r.frozen_tensors, r.audits);

    const MetricsReport m = evaluate(model, scenes, cfg.eval);
    print_metrics(m);
    write_json(dir / "metrics_train.json", m);
    return 0;
}

int cmd_eval(const Common& c, const std::string& split) {
    const RunConfig cfg = load(c);
    if (c.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    Model model(cfg.model, cfg.seed);
    load_checkpoint(c.checkpoint, model.registry());
    const auto scenes = generate_split(cfg.data, split == "train" ? Split::train : Split::val);
    const auto preds = predict_all(model, scenes);
    const MetricsReport m = evaluate(scenes, preds, cfg.eval);
    print_metrics(m);
    const fs::path dir = c.out_dir;
    fs::create_directories(dir);
    nlohmann::json j = m;
    j["split"] = split;
    j["random_ranking_recall@1"] = random_ranking_recall(scenes, preds, 1, cfg.eval.iou_threshold);
    write_json(dir / ("metrics_" + split + ".json"), j);
    write_prediction_dump(dir / ("predictions_" + split + ".jsonl"), preds);
    return 0;
}

int cmd_count(const Common& c) {
    const RunConfig cfg = load(c);
    const ParamReport r = count_params(cfg.model);
    for (const auto& row : r.rows) {
        fmt::print("{:<44} {:>16} {:>12} {:<9} {}\n", row.name, shape_str(row.shape), row.count,
                   row.trainable ? "trainable" : "frozen", to_string(row.group));
    }
    fmt::print("\ntrainable_backbone {}\nfrozen_backbone    {}\nhead               {}\ngrand_total        {}\n",
               r.trainable_backbone, r.frozen_backbone, r.head, r.grand_total);
    if (cfg.model.variant != Variant::full_train) {
        ModelConfig base = cfg.model;
        base.variant = Variant::full_train;
        const ParamReport b = count_params(base);
        fmt::print("full_train trainable_backbone at the same widths {} (ratio {:.4f})\n", b.trainable_backbone,
                   static_cast<double>(r.trainable_backbone) / static_cast<double>(b.trainable_backbone));
    }
    if (!c.out_dir.empty()) {
        fs::create_directories(c.out_dir);
        write_json(fs::path(c.out_dir) / "params.json", r);
    }
    return 0;
}

int cmd_gradcheck(const Common& c) {
    Common g = c;
    if (g.config.empty() && g.preset == "desk") g.preset = "tiny";
    const RunConfig cfg = load(g);
    if (cfg.model.d_model > 16) throw ConfigError("gradcheck expects a tiny config (d_model <= 16)");
    const GradcheckReport r = gradcheck(cfg);
    for (const auto& row : r.rows) {
        fmt::print("{:<44} n={:<3} |g|max {:.3e}  rel {:.3e}  {}\n", row.name, row.checked, row.max_abs_analytic,
                   row.rel_error, row.passed ? "ok" : "FAIL");
    }
    if (!c.out_dir.empty()) {
        fs::create_directories(c.out_dir);
        write_json(fs::path(c.out_dir) / "gradcheck.json", r);
    }
    if (!r.passed) {
        fmt::print("gradcheck failed for {} tensor(s):", r.failures.size());
        for (const auto& f : r.failures) fmt::print(" {}", f);
        fmt::print("\n");
        return 1;
    }
    fmt::print("all {} trainable tensors below {:.0e}\n", r.rows.size(), r.tolerance);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LightMDETR desk-scale trainer"};
    app.require_subcommand(1);
    Common c;
    std::string split = "val";
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--preset", c.preset, "desk, tiny or paper when no --config is given");
        sub->add_option("--seed", c.seed, "overrides the config seed");
        sub->add_option("--out-dir", c.out_dir, "output directory");
        sub->add_option("--checkpoint", c.checkpoint, "model checkpoint to load");
    };
    auto* synth = app.add_subcommand("synth", "write the synthetic dataset");
    auto* train_cmd = app.add_subcommand("train", "train and write checkpoint + loss log");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    auto* count = app.add_subcommand("count-params", "parameter accounting");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
    for (auto* s : {synth, train_cmd, eval, count, grad}) add_common(s);
    eval->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (*synth) return cmd_synth(c);
        if (*train_cmd) return cmd_train(c);
        if (*eval) return cmd_eval(c, split);
        if (*count) return cmd_count(c);
        if (*grad) return cmd_gradcheck(c);
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
