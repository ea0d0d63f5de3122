// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "lmdetr/checkpoint.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

FreezeAudit::FreezeAudit(const ParamRegistry& reg) {
    for (const auto& e : reg.entries()) {
        if (e.trainable || !e.tensor.defined()) continue;
        snapshot_.emplace_back(e.name, std::vector<double>(e.tensor.data().begin(), e.tensor.data().end()));
    }
}

std::vector<std::string> FreezeAudit::drifted(const ParamRegistry& reg) const {
    std::vector<std::string> out;
    for (const auto& [name, values] : snapshot_) {
        const auto now = reg.get(name).data();
        if (now.size() != values.size() || std::memcmp(now.data(), values.data(), values.size() * sizeof(double)) != 0) {
            out.push_back(name);
        }
    }
    return out;
}

void FreezeAudit::check(const ParamRegistry& reg) const {
    const auto bad = drifted(reg);
    if (!bad.empty()) {
        throw TrainingError("freeze audit: " + std::to_string(bad.size()) + " frozen tensor(s) changed, first " +
                            bad.front());
    }
}

double learning_rate(const RunConfig& cfg, std::size_t step) {
    double lr = cfg.optim.lr;
    if (cfg.train.warmup_steps > 0 && step <= cfg.train.warmup_steps) {
        lr *= static_cast<double>(step) / static_cast<double>(cfg.train.warmup_steps);
    }
    if (cfg.train.lr_drop_step > 0 && step > cfg.train.lr_drop_step) lr *= cfg.train.lr_drop_factor;
    return lr;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(stable_hash("epoch/" + std::to_string(epoch), seed));
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

StepLog accumulate_batch(const Model& model, std::span<const Scene* const> batch, const LossWeights& w) {
    StepLog log;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const Scene* scene : batch) {
        Tape tape;
        TapeScope scope(tape);
        const Predictions pred = model.forward(*scene);
        const LossReport r = total_loss(pred, ground_truth(*scene), w);
        log.total += r.total.item() * inv;
        log.l1 += r.l1.item() * inv;
        log.giou += r.giou.item() * inv;
        log.soft_token += r.soft_token.item() * inv;
        log.contrastive += r.contrastive.item() * inv;
        if (!std::isfinite(r.total.item())) return log;
        if (r.total.requires_grad()) tape.backward(ops::scale(r.total, inv));
    }
    return log;
}

namespace {

[[noreturn]] void abort_nonfinite(const TrainOptions& opts, const ParamRegistry& reg, const StepLog& log,
                                  const std::vector<const Scene*>& batch) {
    nlohmann::json dump;
    dump["step"] = log.step;
    dump["loss"] = {{"total", fmt::format("{}", log.total)},
                    {"l1", fmt::format("{}", log.l1)},
                    {"giou", fmt::format("{}", log.giou)},
                    {"soft_token", fmt::format("{}", log.soft_token)},
                    {"contrastive", fmt::format("{}", log.contrastive)}};
    for (const Scene* s : batch) {
        nlohmann::json scene;
        scene["id"] = s->id;
        scene["tokens"] = s->tokens;
        for (const auto& o : s->objects) scene["boxes"].push_back(o.box.as_array());
        dump["batch"].push_back(scene);
    }
    for (const auto& e : reg.entries()) {
        double sq = 0.0;
        bool finite = true;
        for (double v : e.tensor.data()) {
            sq += v * v;
            finite = finite && std::isfinite(v);
        }
        dump["param_norms"][e.name] = finite ? fmt::format("{}", std::sqrt(sq)) : "non-finite";
    }
    std::string where = "";
    if (opts.out_dir) {
        const auto path = *opts.out_dir / fmt::format("nonfinite_step{}.json", log.step);
        std::ofstream(path) << dump.dump(2) << '\n';
        where = ", dump written to " + path.string();
    } else {
        where = ": " + dump["loss"].dump() + " on scenes " + dump["batch"].dump().substr(0, 200);
    }
    throw TrainingError(fmt::format("non-finite loss at step {}{}", log.step, where));
}

}  // namespace

TrainResult train(Model& model, Adam& adam, const std::vector<Scene>& scenes, const RunConfig& cfg,
                  const TrainOptions& opts) {
    if (scenes.empty()) throw ConfigError("train: no training scenes");
    if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);
    ParamRegistry& reg = model.registry();
    const FreezeAudit audit(reg);
    const std::size_t n = scenes.size();
    const std::size_t batch_size = std::min(cfg.train.batch_size, n);
    const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
    const std::size_t total = cfg.train.total_steps(n);
    const std::size_t start = static_cast<std::size_t>(adam.step_count());

    TrainResult result;
    result.frozen_tensors = audit.tensors();
    std::size_t cached_epoch = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order;
    for (std::size_t s = start; s < total; ++s) {
        const std::size_t epoch = s / per_epoch, pos = s % per_epoch;
        if (epoch != cached_epoch) {
            order = epoch_order(cfg.seed, epoch, n);
            cached_epoch = epoch;
        }
        std::vector<const Scene*> batch;
        for (std::size_t i = pos * batch_size; i < std::min(n, (pos + 1) * batch_size); ++i) {
            batch.push_back(&scenes[order[i]]);
        }
        reg.zero_grad();
        StepLog log = accumulate_batch(model, batch, cfg.loss);
        log.step = s + 1;
        log.lr = learning_rate(cfg, s + 1);
        if (!std::isfinite(log.total)) abort_nonfinite(opts, reg, log, batch);
        adam.set_lr(log.lr);
        adam.step(reg);
        result.curve.push_back(log);
        if (opts.on_log && (log.step % std::max<std::size_t>(cfg.train.log_every, 1) == 0 || s + 1 == total)) {
            opts.on_log(log);
        }
        if (pos + 1 == per_epoch || s + 1 == total) {
            audit.check(reg);
            ++result.audits;
        }
    }

    if (opts.out_dir) {
        const auto& dir = *opts.out_dir;
        save_checkpoint(dir / "model.ckpt", reg);
        save_optimizer(dir / "optimizer.ckpt", adam);
        std::vector<StepLog> curve;
        if (start > 0 && std::filesystem::exists(dir / "loss_log.tsv")) {
            for (const auto& l : read_loss_log(dir / "loss_log.tsv")) {
                if (l.step <= start) curve.push_back(l);
            }
        }
        curve.insert(curve.end(), result.curve.begin(), result.curve.end());
        write_loss_log(dir / "loss_log.tsv", curve);
        if (opts.write_plot) write_loss_plot(dir / "loss_curve.svg", curve);
    }
    return result;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<StepLog>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "step\ttotal\tl1\tgiou\tsoft_token\tcontrastive\tlr\n";
    for (const auto& l : curve) {
        // Shortest round-trip representation keeps the log bit-exact.
        out << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", l.step, l.total, l.l1, l.giou, l.soft_token, l.contrastive,
                           l.lr);
    }
}

std::vector<StepLog> read_loss_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<StepLog> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        StepLog l;
        if (!(row >> l.step >> l.total >> l.l1 >> l.giou >> l.soft_token >> l.contrastive >> l.lr)) {
            throw LoadError(path.string() + ": malformed row '" + line + "'");
        }
        out.push_back(l);
    }
    return out;
}

void write_loss_plot(const std::filesystem::path& path, const std::vector<StepLog>& curve) {
    constexpr double width = 640, height = 360, margin = 48;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">)", width, height) << '\n';
    out << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
    if (!curve.empty()) {
        double lo = curve.front().total, hi = lo;
        for (const auto& l : curve) {
            lo = std::min(lo, l.total);
            hi = std::max(hi, l.total);
        }
        lo = std::log10(std::max(lo, 1e-12));
        hi = std::log10(std::max(hi, 1e-12));
        if (hi - lo < 1e-9) hi = lo + 1.0;
        const double last = static_cast<double>(std::max<std::size_t>(curve.back().step, 2));
        out << R"(<polyline fill="none" stroke="steelblue" stroke-width="1" points=")";
        for (const auto& l : curve) {
            const double x = margin + (static_cast<double>(l.step) - 1.0) / (last - 1.0) * (width - 2 * margin);
            const double y = height - margin -
                             (std::log10(std::max(l.total, 1e-12)) - lo) / (hi - lo) * (height - 2 * margin);
            out << fmt::format("{:.2f},{:.2f} ", x, y);
        }
        out << "\"/>\n";
        out << fmt::format(R"(<text x="{}" y="{}" font-size="12">total loss (log10 {:.2f} .. {:.2f}), steps 1..{}</text>)",
                           margin, margin / 2, lo, hi, curve.back().step)
            << '\n';
    }
    out << "</svg>\n";
}

}  // namespace lmdetr
