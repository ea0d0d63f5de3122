// SPDX-License-Identifier: Apache-2.0
//
// Training loop: per-epoch shuffled mini-batches, gradient accumulation over
// the batch, Adam on trainable entries, and a freeze audit after every epoch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lmdetr/config.hpp"
#include "lmdetr/losses.hpp"
#include "lmdetr/model.hpp"
#include "lmdetr/optim.hpp"

namespace lmdetr {

struct StepLog {
    std::size_t step = 0;  // 1-based
    double total = 0.0, l1 = 0.0, giou = 0.0, soft_token = 0.0, contrastive = 0.0;
    double lr = 0.0;
};

// Byte copies of every frozen tensor, taken at construction.
class FreezeAudit {
public:
    explicit FreezeAudit(const ParamRegistry& reg);
    // Names of frozen tensors whose bytes changed, in registry order.
    std::vector<std::string> drifted(const ParamRegistry& reg) const;
    // TrainingError when anything drifted.
    void check(const ParamRegistry& reg) const;
    std::size_t tensors() const { return snapshot_.size(); }

private:
    std::vector<std::pair<std::string, std::vector<double>>> snapshot_;
};

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoint, logs, plot, failure dumps
    bool write_plot = true;
    std::function<void(const StepLog&)> on_log;    // every log_every steps and at the end
};

struct TrainResult {
    std::vector<StepLog> curve;  // every step
    std::size_t audits = 0;      // freeze audits performed, all clean
    std::size_t frozen_tensors = 0;
};

double learning_rate(const RunConfig& cfg, std::size_t step);

// Continues from adam.step_count(), so a restored optimizer resumes the run.
TrainResult train(Model& model, Adam& adam, const std::vector<Scene>& scenes, const RunConfig& cfg,
                  const TrainOptions& opts = {});

// One batch: mean loss over scenes, gradients accumulated into the registry.
// Returns per-term means.
StepLog accumulate_batch(const Model& model, std::span<const Scene* const> batch, const LossWeights& w);

// Step order of scene indices for one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

void write_loss_log(const std::filesystem::path& path, const std::vector<StepLog>& curve);
std::vector<StepLog> read_loss_log(const std::filesystem::path& path);
void write_loss_plot(const std::filesystem::path& path, const std::vector<StepLog>& curve);

}  // namespace lmdetr
