// SPDX-License-Identifier: Apache-2.0
//
// Hungarian matching between queries and ground truth, and the training loss
//
//   total = l1_w * L1 + giou_w * GIoU + tok_w * soft_token + con_w * (L_o + L_t) / 2
//
// computed on the matched pairs. The matcher is not differentiated through.

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "lmdetr/boxes.hpp"
#include "lmdetr/config.hpp"
#include "lmdetr/detection.hpp"
#include "lmdetr/synth.hpp"

namespace lmdetr {

struct GroundTruth {
    std::vector<Box> boxes;
    std::vector<std::vector<std::size_t>> spans;  // token positions per object, non-empty

    std::size_t size() const { return boxes.size(); }
};

// InputError on empty spans or degenerate boxes.
GroundTruth ground_truth(const Scene& scene);
void validate(const GroundTruth& gt, std::size_t token_count);

// Dense M x Q matrix, row = ground truth, column = query.
struct CostMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    double& at(std::size_t g, std::size_t q) { return values[g * cols + q]; }
    double at(std::size_t g, std::size_t q) const { return values[g * cols + q]; }
};

struct MatchAssignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt), ordered by gt
    double total_cost = 0.0;  // sum of cost(gt, query) in gt order
    std::vector<std::size_t> unmatched_queries;

    // query matched to each gt index
    std::vector<std::size_t> query_of_gt() const;
    // gt matched to each query, or -1
    std::vector<long> gt_of_query(std::size_t num_queries) const;
};

// Minimal-cost injection of rows into columns. Among optimal assignments the
// one with the lexicographically smallest (gt, query) sequence wins.
// ContractError when rows > cols, InputError on non-finite costs.
MatchAssignment hungarian_match(const CostMatrix& cost);

// l1_w * |b_q - b_g|_1 + giou_w * giou(b_q, b_g) - tok_w * (span mass of q)
CostMatrix matching_cost(const Predictions& pred, const GroundTruth& gt, const LossWeights& w);

// A loss value plus a marker for the degenerate case where nothing was
// available to average over (the value is then a constant 0).
struct LossTerm {
    Tensor value;
    bool empty = false;
};

// Mean over matched pairs of the 4-coordinate L1 distance.
LossTerm l1_loss(const Tensor& pred_boxes, const GroundTruth& gt, const MatchAssignment& match);
// Mean over matched pairs of the GIoU loss.
LossTerm giou_loss(const Tensor& pred_boxes, const GroundTruth& gt, const MatchAssignment& match);
// Mean over all queries of the cross-entropy to the uniform distribution on
// the matched span, or to the no-object slot for unmatched queries.
LossTerm soft_token_loss(const Tensor& token_logits, const MatchAssignment& match, const GroundTruth& gt);

struct ContrastiveTerms {
    Tensor objects;  // L_o
    Tensor tokens;   // L_t
    Tensor total;    // (L_o + L_t) / 2
    bool empty = false;
};

// o: [N x d] and t: [L_tok x d] unit rows; positives[i] lists the tokens of
// object row i (empty for rows without a target). L_o averages over rows with
// positives and normalizes over all tokens; L_t averages over tokens that are
// positive for some row and normalizes over all N rows.
ContrastiveTerms contrastive_loss(const Tensor& o, const Tensor& t,
                                  const std::vector<std::vector<std::size_t>>& positives, double temperature);

struct LossReport {
    Tensor l1, giou, soft_token, contrastive_objects, contrastive_tokens, contrastive, total;
    LossWeights weights;
    MatchAssignment match;
    bool empty = false;  // no ground-truth objects

    double value() const { return total.item(); }
};

// Matches on the weighted cost unless `fixed` is given, then assembles every
// term on that assignment.
LossReport total_loss(const Predictions& pred, const GroundTruth& gt, const LossWeights& w,
                      const MatchAssignment* fixed = nullptr);

}  // namespace lmdetr
