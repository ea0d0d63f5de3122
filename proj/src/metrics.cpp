// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

ScenePrediction predict(const Model& model, const Scene& scene) {
    const Predictions p = model.forward(scene);
    ScenePrediction out;
    out.scene_id = scene.id;
    const auto b = p.boxes.data();
    const Tensor probs = ops::softmax(p.token_logits, 1);
    const std::size_t slots = probs.cols();
    for (std::size_t q = 0; q < p.num_queries(); ++q) {
        out.boxes.push_back({b[q * 4], b[q * 4 + 1], b[q * 4 + 2], b[q * 4 + 3]});
        const auto row = probs.data().subspan(q * slots, slots);
        out.token_probs.emplace_back(row.begin(), row.end());
    }
    return out;
}

std::vector<ScenePrediction> predict_all(const Model& model, const std::vector<Scene>& scenes) {
    std::vector<ScenePrediction> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(predict(model, s));
    return out;
}

void to_json(nlohmann::json& j, const MetricsReport& m) {
    j = nlohmann::json::object();
    j["phrases"] = m.phrases;
    for (const auto& [k, v] : m.recall) j["recall@" + std::to_string(k)] = v;
    for (const auto& [k, v] : m.precision) j["precision@" + std::to_string(k)] = v;
    j["mean_iou_top1"] = m.mean_iou_top1;
    for (const auto& [t, v] : m.top1_hit_rate) {
        j["pr@" + std::to_string(static_cast<int>(t * 100 + 0.5))] = v;
    }
}

namespace {

// Query indices ordered by descending phrase score, ties by index.
std::vector<std::size_t> rank_queries(const ScenePrediction& pred, const TokenSpan& span, double min_confidence) {
    std::vector<std::size_t> order;
    std::vector<double> score(pred.boxes.size(), 0.0);
    for (std::size_t q = 0; q < pred.boxes.size(); ++q) {
        if (min_confidence > 0.0 && pred.confidence(q) < min_confidence) continue;
        for (std::size_t j = span.begin; j < span.end; ++j) score[q] += pred.token_probs[q].at(j);
        order.push_back(q);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    return order;
}

const ScenePrediction& matching_prediction(const Scene& s, const ScenePrediction& p) {
    if (s.id != p.scene_id) {
        throw ContractError("evaluate: prediction for scene " + std::to_string(p.scene_id) + " paired with scene " +
                            std::to_string(s.id));
    }
    return p;
}

}  // namespace

MetricsReport evaluate(const std::vector<Scene>& scenes, const std::vector<ScenePrediction>& preds,
                       const EvalConfig& cfg) {
    if (scenes.size() != preds.size()) throw ContractError("evaluate: scene and prediction counts differ");
    MetricsReport r;
    for (auto k : cfg.ks) {
        r.recall[k] = 0.0;
        r.precision[k] = 0.0;
    }
    const std::vector<double> thresholds{0.5, 0.7, 0.9};
    for (double t : thresholds) r.top1_hit_rate[t] = 0.0;

    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& pred = matching_prediction(scenes[s], preds[s]);
        for (const auto& phrase : scenes[s].phrases) {
            if (!phrase.object) continue;
            const Box& gt = scenes[s].objects.at(*phrase.object).box;
            const auto order = rank_queries(pred, phrase.span, cfg.confidence_threshold);
            ++r.phrases;
            std::vector<double> ious;
            for (auto q : order) ious.push_back(iou(pred.boxes[q], gt));
            for (auto k : cfg.ks) {
                const std::size_t top = std::min(k, ious.size());
                const auto hits = static_cast<double>(
                    std::count_if(ious.begin(), ious.begin() + static_cast<long>(top),
                                  [&](double v) { return v >= cfg.iou_threshold; }));
                if (hits > 0) r.recall[k] += 1.0;
                r.precision[k] += hits / static_cast<double>(k);
            }
            const double best = ious.empty() ? 0.0 : ious.front();
            r.mean_iou_top1 += best;
            for (double t : thresholds) {
                if (best >= t) r.top1_hit_rate[t] += 1.0;
            }
        }
    }
    if (r.phrases > 0) {
        const double n = static_cast<double>(r.phrases);
        for (auto& [k, v] : r.recall) v /= n;
        for (auto& [k, v] : r.precision) v /= n;
        for (auto& [t, v] : r.top1_hit_rate) v /= n;
        r.mean_iou_top1 /= n;
    }
    return r;
}

MetricsReport evaluate(const Model& model, const std::vector<Scene>& scenes, const EvalConfig& cfg) {
    return evaluate(scenes, predict_all(model, scenes), cfg);
}

double random_ranking_recall(const std::vector<Scene>& scenes, const std::vector<ScenePrediction>& preds,
                             std::size_t k, double iou_threshold) {
    if (scenes.size() != preds.size()) throw ContractError("random_ranking_recall: count mismatch");
    double total = 0.0;
    std::size_t phrases = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& pred = matching_prediction(scenes[s], preds[s]);
        const std::size_t q = pred.boxes.size();
        for (const auto& phrase : scenes[s].phrases) {
            if (!phrase.object) continue;
            const Box& gt = scenes[s].objects.at(*phrase.object).box;
            std::size_t h = 0;
            for (const auto& b : pred.boxes) h += iou(b, gt) >= iou_threshold ? 1 : 0;
            // P(no hit in k draws without replacement) = prod_{i<k} (q - h - i) / (q - i)
            double miss = 1.0;
            for (std::size_t i = 0; i < std::min(k, q); ++i) {
                miss *= q - h > i ? static_cast<double>(q - h - i) / static_cast<double>(q - i) : 0.0;
            }
            total += 1.0 - miss;
            ++phrases;
        }
    }
    return phrases ? total / static_cast<double>(phrases) : 0.0;
}

void write_prediction_dump(const std::filesystem::path& path, const std::vector<ScenePrediction>& preds) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : preds) {
        for (std::size_t q = 0; q < p.boxes.size(); ++q) {
            nlohmann::json rec;
            rec["scene_id"] = p.scene_id;
            rec["query_index"] = q;
            rec["box"] = p.boxes[q].as_array();
            rec["confidence"] = p.confidence(q);
            rec["token_distribution"] = p.token_probs[q];
            out << rec.dump() << '\n';
        }
    }
}

}  // namespace lmdetr
