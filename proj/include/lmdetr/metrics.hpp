// SPDX-License-Identifier: Apache-2.0
//
// Phrase-grounding evaluation. Every phrase that names a present object ranks
// the Q predicted boxes by the softmax mass the query puts on the phrase's
// tokens; a phrase is recalled at k when any of the top k boxes overlaps its
// object with IoU >= threshold.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmdetr/config.hpp"
#include "lmdetr/model.hpp"

namespace lmdetr {

// Plain values of one forward pass.
struct ScenePrediction {
    std::uint64_t scene_id = 0;
    std::vector<Box> boxes;                       // Q
    std::vector<std::vector<double>> token_probs;  // Q x (L + 1), last column is no-object

    double confidence(std::size_t q) const { return 1.0 - token_probs[q].back(); }
};

ScenePrediction predict(const Model& model, const Scene& scene);
std::vector<ScenePrediction> predict_all(const Model& model, const std::vector<Scene>& scenes);

struct MetricsReport {
    std::size_t phrases = 0;
    std::map<std::size_t, double> recall;     // k -> Recall@k
    std::map<std::size_t, double> precision;  // k -> P@k
    double mean_iou_top1 = 0.0;
    std::map<double, double> top1_hit_rate;   // IoU threshold -> fraction of phrases whose top box clears it
};

void to_json(nlohmann::json& j, const MetricsReport& m);

// Queries with confidence below cfg.confidence_threshold are dropped from the
// ranking when the threshold is positive.
MetricsReport evaluate(const std::vector<Scene>& scenes, const std::vector<ScenePrediction>& preds,
                       const EvalConfig& cfg);
MetricsReport evaluate(const Model& model, const std::vector<Scene>& scenes, const EvalConfig& cfg);

// Expected Recall@k of a uniformly random ranking of the same predicted
// boxes: mean over phrases of 1 - C(Q - h, k) / C(Q, k), with h the number of
// boxes clearing `iou_threshold`.
double random_ranking_recall(const std::vector<Scene>& scenes, const std::vector<ScenePrediction>& preds,
                             std::size_t k, double iou_threshold);

// JSONL: {scene_id, query_index, box[4], confidence, token_distribution[L+1]}
void write_prediction_dump(const std::filesystem::path& path, const std::vector<ScenePrediction>& preds);

}  // namespace lmdetr
