// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmdetr/errors.hpp"
#include "lmdetr/ops.hpp"

namespace lmdetr {

GroundTruth ground_truth(const Scene& scene) {
    GroundTruth gt;
    for (const auto& obj : scene.objects) {
        gt.boxes.push_back(obj.box);
        std::vector<std::size_t> span(obj.span.size());
        std::iota(span.begin(), span.end(), obj.span.begin);
        gt.spans.push_back(std::move(span));
    }
    validate(gt, scene.tokens.size());
    return gt;
}

void validate(const GroundTruth& gt, std::size_t token_count) {
    if (gt.spans.size() != gt.boxes.size()) throw InputError("ground truth: box and span counts differ");
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const Box& b = gt.boxes[i];
        const Corners c = to_corners(b);
        if (!(b.w > 0.0 && b.h > 0.0) || c.x0 < -1e-12 || c.y0 < -1e-12 || c.x1 > 1.0 + 1e-12 || c.y1 > 1.0 + 1e-12) {
            throw InputError("ground truth: object " + std::to_string(i) + " has an invalid box");
        }
        if (gt.spans[i].empty()) throw InputError("ground truth: object " + std::to_string(i) + " has an empty span");
        for (auto j : gt.spans[i]) {
            if (j >= token_count) {
                throw InputError("ground truth: object " + std::to_string(i) + " span position " + std::to_string(j) +
                                 " outside " + std::to_string(token_count) + " tokens");
            }
        }
    }
}

std::vector<std::size_t> MatchAssignment::query_of_gt() const {
    std::vector<std::size_t> out(pairs.size());
    for (const auto& [q, g] : pairs) out[g] = q;
    return out;
}

std::vector<long> MatchAssignment::gt_of_query(std::size_t num_queries) const {
    std::vector<long> out(num_queries, -1);
    for (const auto& [q, g] : pairs) out[q] = static_cast<long>(g);
    return out;
}

namespace {

// Optimal value of the assignment restricted to `rows` x `cols`, with the
// potentials method (rows.size() <= cols.size()).
double solve(const CostMatrix& cost, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols,
             std::vector<std::size_t>* col_of_row = nullptr) {
    const std::size_t n = rows.size(), m = cols.size();
    if (n == 0) {
        if (col_of_row) col_of_row->clear();
        return 0.0;
    }
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assigned(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) assigned[p[j] - 1] = j - 1;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost.at(rows[i], cols[assigned[i]]);
    if (col_of_row) *col_of_row = std::move(assigned);
    return total;
}

}  // namespace

MatchAssignment hungarian_match(const CostMatrix& cost) {
    if (cost.rows > cost.cols) {
        throw ContractError("hungarian_match: " + std::to_string(cost.rows) + " ground-truth objects but only " +
                            std::to_string(cost.cols) + " queries");
    }
    for (double c : cost.values) {
        if (!std::isfinite(c)) throw InputError("hungarian_match: non-finite cost");
    }
    std::vector<std::size_t> rows(cost.rows), cols(cost.cols);
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    const double best = solve(cost, rows, cols);
    double scale = 1.0;
    for (double c : cost.values) scale = std::max(scale, std::abs(c));
    const double tol = 1e-12 * scale * static_cast<double>(std::max<std::size_t>(cost.rows, 1));

    // Fix gt rows in order, each to the lowest query that still allows an
    // optimal completion.
    MatchAssignment out;
    std::vector<bool> taken(cost.cols, false);
    double prefix = 0.0;
    for (std::size_t g = 0; g < cost.rows; ++g) {
        std::vector<std::size_t> rest_rows(rows.begin() + static_cast<long>(g) + 1, rows.end());
        bool placed = false;
        for (std::size_t q = 0; q < cost.cols && !placed; ++q) {
            if (taken[q]) continue;
            std::vector<std::size_t> rest_cols;
            for (std::size_t c = 0; c < cost.cols; ++c) {
                if (!taken[c] && c != q) rest_cols.push_back(c);
            }
            const double candidate = prefix + cost.at(g, q) + solve(cost, rest_rows, rest_cols);
            if (candidate <= best + tol) {
                taken[q] = true;
                prefix += cost.at(g, q);
                out.pairs.emplace_back(q, g);
                placed = true;
            }
        }
        if (!placed) throw ContractError("hungarian_match: no optimal completion found");
    }
    out.total_cost = 0.0;
    for (const auto& [q, g] : out.pairs) out.total_cost += cost.at(g, q);
    for (std::size_t q = 0; q < cost.cols; ++q) {
        if (!taken[q]) out.unmatched_queries.push_back(q);
    }
    return out;
}

CostMatrix matching_cost(const Predictions& pred, const GroundTruth& gt, const LossWeights& w) {
    const std::size_t nq = pred.num_queries();
    CostMatrix cost(gt.size(), nq);
    Tensor probs = ops::softmax(pred.token_logits.detach(), 1);
    const auto boxes = pred.boxes.data();
    for (std::size_t g = 0; g < gt.size(); ++g) {
        const auto target = gt.boxes[g].as_array();
        for (std::size_t q = 0; q < nq; ++q) {
            const Box b{boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
            double l1 = 0.0;
            for (std::size_t k = 0; k < 4; ++k) l1 += std::abs(boxes[q * 4 + k] - target[k]);
            double mass = 0.0;
            for (auto j : gt.spans[g]) mass += probs.at(q, j);
            cost.at(g, q) = w.l1 * l1 + w.giou * giou_loss(b, gt.boxes[g]) - w.soft_token * mass;
        }
    }
    return cost;
}

namespace {

Tensor matched_rows(const Tensor& pred_boxes, const MatchAssignment& match) {
    std::vector<std::size_t> rows;
    for (const auto& [q, g] : match.pairs) rows.push_back(q);
    return ops::gather_rows(pred_boxes, rows);
}

Tensor gt_rows(const GroundTruth& gt, const MatchAssignment& match) {
    std::vector<double> values;
    for (const auto& [q, g] : match.pairs) {
        for (double v : gt.boxes.at(g).as_array()) values.push_back(v);
    }
    return Tensor({match.pairs.size(), 4}, std::move(values));
}

struct CornerCols {
    Tensor x0, y0, x1, y1;
};

CornerCols corners(const Tensor& b) {
    Tensor cx = ops::slice_cols(b, 0, 1), cy = ops::slice_cols(b, 1, 1);
    Tensor hw = ops::scale(ops::slice_cols(b, 2, 1), 0.5), hh = ops::scale(ops::slice_cols(b, 3, 1), 0.5);
    return {ops::sub(cx, hw), ops::sub(cy, hh), ops::add(cx, hw), ops::add(cy, hh)};
}

}  // namespace

LossTerm l1_loss(const Tensor& pred_boxes, const GroundTruth& gt, const MatchAssignment& match) {
    if (match.pairs.empty()) return {Tensor::scalar(0.0), true};
    Tensor diff = ops::abs(ops::sub(matched_rows(pred_boxes, match), gt_rows(gt, match)));
    return {ops::scale(ops::sum(diff), 1.0 / static_cast<double>(match.pairs.size())), false};
}

LossTerm giou_loss(const Tensor& pred_boxes, const GroundTruth& gt, const MatchAssignment& match) {
    if (match.pairs.empty()) return {Tensor::scalar(0.0), true};
    for (const auto& [q, g] : match.pairs) {
        if (!(gt.boxes.at(g).w > 0.0 && gt.boxes.at(g).h > 0.0)) throw InputError("giou_loss: zero-area ground truth");
    }
    const CornerCols a = corners(matched_rows(pred_boxes, match));
    const CornerCols b = corners(gt_rows(gt, match));
    Tensor inter = ops::mul(ops::relu(ops::sub(ops::minimum(a.x1, b.x1), ops::maximum(a.x0, b.x0))),
                            ops::relu(ops::sub(ops::minimum(a.y1, b.y1), ops::maximum(a.y0, b.y0))));
    Tensor area_a = ops::mul(ops::sub(a.x1, a.x0), ops::sub(a.y1, a.y0));
    Tensor area_b = ops::mul(ops::sub(b.x1, b.x0), ops::sub(b.y1, b.y0));
    Tensor uni = ops::sub(ops::add(area_a, area_b), inter);
    Tensor hull = ops::mul(ops::sub(ops::maximum(a.x1, b.x1), ops::minimum(a.x0, b.x0)),
                           ops::sub(ops::maximum(a.y1, b.y1), ops::minimum(a.y0, b.y0)));
    Tensor per_pair =
        ops::add(ops::neg(ops::div(inter, uni)), ops::add_scalar(ops::div(ops::sub(hull, uni), hull), 1.0));
    return {ops::scale(ops::sum(per_pair), 1.0 / static_cast<double>(match.pairs.size())), false};
}

LossTerm soft_token_loss(const Tensor& token_logits, const MatchAssignment& match, const GroundTruth& gt) {
    const std::size_t nq = token_logits.rows(), slots = token_logits.cols();
    const std::size_t null_slot = slots - 1;
    std::vector<double> target(nq * slots, 0.0);
    const auto owner = match.gt_of_query(nq);
    for (std::size_t q = 0; q < nq; ++q) {
        if (owner[q] < 0) {
            target[q * slots + null_slot] = 1.0;
            continue;
        }
        const auto& span = gt.spans.at(static_cast<std::size_t>(owner[q]));
        if (span.empty()) throw InputError("soft_token_loss: empty span");
        for (auto j : span) {
            if (j >= null_slot) throw InputError("soft_token_loss: span position outside the token slots");
            target[q * slots + j] = 1.0 / static_cast<double>(span.size());
        }
    }
    Tensor logp = ops::log_softmax(token_logits, 1);
    Tensor ce = ops::sum(ops::mul(logp, Tensor({nq, slots}, std::move(target))));
    return {ops::scale(ce, -1.0 / static_cast<double>(nq)), false};
}

ContrastiveTerms contrastive_loss(const Tensor& o, const Tensor& t,
                                  const std::vector<std::vector<std::size_t>>& positives, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("contrastive_loss: temperature must be positive");
    if (o.rank() != 2 || t.rank() != 2 || o.cols() != t.cols()) {
        throw DimensionError("contrastive_loss: o " + shape_str(o.shape()) + ", t " + shape_str(t.shape()));
    }
    const std::size_t n = o.rows(), l = t.rows();
    if (positives.size() != n) throw DimensionError("contrastive_loss: one positive set per object row required");

    std::vector<std::vector<std::size_t>> token_pos(l);
    std::size_t rows_with_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!positives[i].empty()) ++rows_with_pos;
        for (auto j : positives[i]) {
            if (j >= l) throw InputError("contrastive_loss: positive token index out of range");
            token_pos[j].push_back(i);
        }
    }
    std::size_t tokens_with_pos = 0;
    for (const auto& s : token_pos) tokens_with_pos += s.empty() ? 0 : 1;

    ContrastiveTerms out;
    if (rows_with_pos == 0) {
        out.objects = out.tokens = out.total = Tensor::scalar(0.0);
        out.empty = true;
        return out;
    }
    std::vector<double> wo(n * l, 0.0), wt(n * l, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto j : positives[i]) {
            wo[i * l + j] = 1.0 / (static_cast<double>(positives[i].size()) * static_cast<double>(rows_with_pos));
        }
    }
    for (std::size_t j = 0; j < l; ++j) {
        for (auto i : token_pos[j]) {
            wt[i * l + j] = 1.0 / (static_cast<double>(token_pos[j].size()) * static_cast<double>(tokens_with_pos));
        }
    }
    Tensor logits = ops::scale(ops::matmul(o, ops::transpose(t)), 1.0 / temperature);
    out.objects = ops::neg(ops::sum(ops::mul(ops::log_softmax(logits, 1), Tensor({n, l}, std::move(wo)))));
    out.tokens = ops::neg(ops::sum(ops::mul(ops::log_softmax(logits, 0), Tensor({n, l}, std::move(wt)))));
    out.total = ops::scale(ops::add(out.objects, out.tokens), 0.5);
    return out;
}

LossReport total_loss(const Predictions& pred, const GroundTruth& gt, const LossWeights& w,
                      const MatchAssignment* fixed) {
    validate(gt, pred.token_embed.rows());
    LossReport r;
    r.weights = w;
    r.match = fixed ? *fixed : hungarian_match(matching_cost(pred, gt, w));
    r.empty = gt.size() == 0;

    const LossTerm l1 = l1_loss(pred.boxes, gt, r.match);
    const LossTerm giou = giou_loss(pred.boxes, gt, r.match);
    const LossTerm tok = soft_token_loss(pred.token_logits, r.match, gt);
    std::vector<std::vector<std::size_t>> positives(pred.num_queries());
    for (const auto& [q, g] : r.match.pairs) positives[q] = gt.spans[g];
    const ContrastiveTerms con = contrastive_loss(pred.object_embed, pred.token_embed, positives, w.temperature);

    r.l1 = l1.value;
    r.giou = giou.value;
    r.soft_token = tok.value;
    r.contrastive_objects = con.objects;
    r.contrastive_tokens = con.tokens;
    r.contrastive = con.total;
    r.total = ops::add(ops::add(ops::add(ops::scale(r.l1, w.l1), ops::scale(r.giou, w.giou)),
                                ops::scale(r.soft_token, w.soft_token)),
                       ops::scale(r.contrastive, w.contrastive));
    return r;
}

}  // namespace lmdetr
