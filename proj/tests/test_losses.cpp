// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fd.hpp"
#include "lmdetr/boxes.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/losses.hpp"
#include "lmdetr/ops.hpp"
#include "lmdetr/optim.hpp"

using namespace lmdetr;

namespace {

// Exhaustive search over injections; the first strictly better candidate in
// lexicographic (gt, query) order wins.
struct Brute {
    double best = 0.0;
    std::vector<std::size_t> assignment;
};

void search(const CostMatrix& c, std::size_t g, std::vector<std::size_t>& cur, std::vector<bool>& used, Brute& b,
            bool& found) {
    if (g == c.rows) {
        double total = 0.0;
        for (std::size_t i = 0; i < c.rows; ++i) total += c.at(i, cur[i]);
        if (!found || total < b.best) {
            b.best = total;
            b.assignment = cur;
            found = true;
        }
        return;
    }
    for (std::size_t q = 0; q < c.cols; ++q) {
        if (used[q]) continue;
        used[q] = true;
        cur.push_back(q);
        search(c, g + 1, cur, used, b, found);
        cur.pop_back();
        used[q] = false;
    }
}

Brute brute_force(const CostMatrix& c) {
    Brute b;
    std::vector<std::size_t> cur;
    std::vector<bool> used(c.cols, false);
    bool found = false;
    search(c, 0, cur, used, b, found);
    return b;
}

// Area fractions by counting cell centres on an n x n grid over [0, 1]^2.
double raster_giou_loss(const Box& a, const Box& b, int n = 1000) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const Corners hull{std::min(ca.x0, cb.x0), std::min(ca.y0, cb.y0), std::max(ca.x1, cb.x1),
                       std::max(ca.y1, cb.y1)};
    long inter = 0, uni = 0, in_hull = 0;
    auto inside = [](const Corners& c, double x, double y) { return x >= c.x0 && x < c.x1 && y >= c.y0 && y < c.y1; };
    for (int i = 0; i < n; ++i) {
        const double y = (i + 0.5) / n;
        for (int j = 0; j < n; ++j) {
            const double x = (j + 0.5) / n;
            const bool ia = inside(ca, x, y), ib = inside(cb, x, y);
            inter += ia && ib;
            uni += ia || ib;
            in_hull += inside(hull, x, y);
        }
    }
    const double iou_v = static_cast<double>(inter) / static_cast<double>(uni);
    return 1.0 - iou_v + static_cast<double>(in_hull - uni) / static_cast<double>(in_hull);
}

Box random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x0 = u(rng) * 0.8, y0 = u(rng) * 0.8;
    const double x1 = x0 + 0.05 + u(rng) * (0.95 - x0), y1 = y0 + 0.05 + u(rng) * (0.95 - y0);
    return from_corners({x0, y0, std::min(x1, 1.0), std::min(y1, 1.0)});
}

Predictions uniform_predictions(std::size_t q, std::size_t slots, std::size_t tokens, std::size_t dc = 4) {
    Predictions p;
    p.boxes = Tensor::filled({q, 4}, 0.5);
    p.token_logits = Tensor::zeros({q, slots});
    std::vector<double> o(q * dc, 0.0), t(tokens * dc, 0.0);
    for (std::size_t i = 0; i < q; ++i) o[i * dc] = 1.0;
    for (std::size_t j = 0; j < tokens; ++j) t[j * dc] = 1.0;
    p.object_embed = Tensor({q, dc}, o);
    p.token_embed = Tensor({tokens, dc}, t);
    return p;
}

}  // namespace

TEST(GIoU, IdenticalBoxesGiveZero) {
    EXPECT_NEAR(giou_loss(Box{0.4, 0.5, 0.2, 0.3}, Box{0.4, 0.5, 0.2, 0.3}), 0.0, 1e-12);
    EXPECT_NEAR(giou_loss(Corners{0, 0, 1, 1}, Corners{0, 0, 1, 1}), 0.0, 1e-12);
}

TEST(GIoU, DisjointFixture) {
    EXPECT_NEAR(giou_loss(Corners{0, 0, 1, 1}, Corners{2, 2, 3, 3}), 1.0 + 7.0 / 9.0, 1e-12);
}

TEST(GIoU, DegenerateGroundTruthIsInputError) {
    EXPECT_THROW(giou_loss(Box{0.5, 0.5, 0.2, 0.2}, Box{0.5, 0.5, 0.0, 0.2}), InputError);
}

TEST(GIoU, MatchesRasterOracleAndIsSymmetricAndBounded) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 40; ++i) {
        const Box a = random_box(rng), b = random_box(rng);
        const double v = giou_loss(a, b);
        EXPECT_NEAR(v, raster_giou_loss(a, b), 1e-2) << i;
        EXPECT_NEAR(v, giou_loss(b, a), 1e-12);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 2.0);
    }
}

TEST(GIoU, TensorFormMatchesScalarForm) {
    std::mt19937_64 rng(5);
    GroundTruth gt;
    std::vector<double> pred;
    MatchAssignment m;
    double expected = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        const Box p = random_box(rng), g = random_box(rng);
        for (double v : p.as_array()) pred.push_back(v);
        gt.boxes.push_back(g);
        gt.spans.push_back({0});
        m.pairs.emplace_back(i, i);
        expected += giou_loss(p, g) / 5.0;
    }
    const LossTerm t = giou_loss(Tensor({5, 4}, pred), gt, m);
    EXPECT_NEAR(t.value.item(), expected, 1e-12);
}

TEST(L1, Examples) {
    GroundTruth gt{{Box{0.5, 0.5, 0.2, 0.2}}, {{0}}};
    MatchAssignment m;
    m.pairs = {{0, 0}};
    EXPECT_EQ(l1_loss(Tensor({1, 4}, {0.5, 0.5, 0.2, 0.2}), gt, m).value.item(), 0.0);
    EXPECT_NEAR(l1_loss(Tensor({1, 4}, {0.6, 0.5, 0.2, 0.2}), gt, m).value.item(), 0.1, 1e-12);
    EXPECT_NEAR(l1_loss(Tensor({1, 4}, {0.7, 0.5, 0.2, 0.2}), gt, m).value.item(), 0.2, 1e-12);
    const LossTerm empty = l1_loss(Tensor({1, 4}, {0.6, 0.5, 0.2, 0.2}), gt, MatchAssignment{});
    EXPECT_TRUE(empty.empty);
    EXPECT_EQ(empty.value.item(), 0.0);
}

TEST(Hungarian, TwoByTwo) {
    CostMatrix c(2, 2);
    c.values = {1, 9, 9, 1};
    const auto m = hungarian_match(c);
    EXPECT_EQ(m.total_cost, 2.0);
    ASSERT_EQ(m.pairs.size(), 2u);
    EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
    EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{1, 1}));
    EXPECT_TRUE(m.unmatched_queries.empty());
}

TEST(Hungarian, SingleRowPicksArgmin) {
    CostMatrix c(1, 5);
    c.values = {3, 2, 0.5, 7, 0.5};
    const auto m = hungarian_match(c);
    EXPECT_EQ(m.pairs.at(0).first, 2u);
    EXPECT_EQ(m.unmatched_queries, (std::vector<std::size_t>{0, 1, 3, 4}));
}

TEST(Hungarian, TiesBreakLexicographically) {
    CostMatrix c(2, 3, 1.0);
    const auto m = hungarian_match(c);
    EXPECT_EQ(m.query_of_gt(), (std::vector<std::size_t>{0, 1}));
}

TEST(Hungarian, MoreRowsThanColumnsIsContractError) {
    EXPECT_THROW(hungarian_match(CostMatrix(3, 2)), ContractError);
}

TEST(Hungarian, EmptyGroundTruth) {
    const auto m = hungarian_match(CostMatrix(0, 4));
    EXPECT_TRUE(m.pairs.empty());
    EXPECT_EQ(m.unmatched_queries.size(), 4u);
}

TEST(Hungarian, EqualsBruteForceOnRandomInstances) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t q = 1 + rng() % 7;
        const std::size_t m = 1 + rng() % std::min<std::size_t>(5, q);
        CostMatrix c(m, q);
        for (auto& v : c.values) v = u(rng);
        // Some instances with repeated values to exercise ties.
        if (trial % 4 == 0) {
            for (auto& v : c.values) v = std::round(v);
        }
        const auto got = hungarian_match(c);
        const auto want = brute_force(c);
        EXPECT_EQ(got.total_cost, want.best) << "trial " << trial;
        EXPECT_EQ(got.query_of_gt(), want.assignment) << "trial " << trial;
    }
}

TEST(SoftToken, UniformLogitsSingletonSpanGiveLogSlots) {
    GroundTruth gt{{Box{0.5, 0.5, 0.2, 0.2}}, {{3}}};
    MatchAssignment m;
    m.pairs = {{0, 0}};
    const LossTerm t = soft_token_loss(Tensor::zeros({1, 17}), m, gt);
    EXPECT_NEAR(t.value.item(), std::log(17.0), 1e-12);
}

TEST(SoftToken, LogOfTargetGivesTargetEntropy) {
    GroundTruth gt{{Box{0.5, 0.5, 0.2, 0.2}}, {{1, 2, 4}}};
    MatchAssignment m;
    m.pairs = {{0, 0}};
    std::vector<double> logits(9, -1e3);
    for (auto j : gt.spans[0]) logits[j] = std::log(1.0 / 3.0);
    const LossTerm t = soft_token_loss(Tensor({1, 9}, logits), m, gt);
    EXPECT_NEAR(t.value.item(), std::log(3.0), 1e-12);
}

TEST(SoftToken, ConfidentNullForUnmatchedQueryContributesNothing) {
    GroundTruth gt;
    std::vector<double> logits(5, 0.0);
    logits[4] = 1e3;
    const LossTerm t = soft_token_loss(Tensor({1, 5}, logits), MatchAssignment{{}, 0.0, {0}}, gt);
    EXPECT_NEAR(t.value.item(), 0.0, 1e-12);
}

TEST(SoftToken, GradientDescentConvergesToUniformSpanTarget) {
    ParamRegistry reg(3);
    Tensor logits = reg.add("logits", {1, 8}, true, ParamGroup::head, Init::normal(1.0));
    GroundTruth gt{{Box{0.5, 0.5, 0.2, 0.2}}, {{2, 5}}};
    MatchAssignment m;
    m.pairs = {{0, 0}};
    Adam adam({.lr = 0.05});
    for (int s = 0; s < 3000; ++s) {
        reg.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        tape.backward(soft_token_loss(logits, m, gt).value);
        adam.step(reg);
    }
    const Tensor p = ops::softmax(logits.detach(), 1);
    EXPECT_NEAR(p.at(0, 2), 0.5, 1e-3);
    EXPECT_NEAR(p.at(0, 5), 0.5, 1e-3);
    EXPECT_NEAR(soft_token_loss(logits.detach(), m, gt).value.item(), std::log(2.0), 1e-3);
}

TEST(Contrastive, UniformOneByFour) {
    const Tensor o = Tensor::matrix({{1, 0}});
    const Tensor t = Tensor::matrix({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
    const auto c = contrastive_loss(o, t, {{2}}, 0.07);
    EXPECT_NEAR(c.objects.item(), std::log(4.0), 1e-12);
    EXPECT_NEAR(c.tokens.item(), 0.0, 1e-12);
    EXPECT_NEAR(c.total.item(), std::log(4.0) / 2.0, 1e-12);
}

TEST(Contrastive, SingletonGivesZero) {
    const auto c = contrastive_loss(Tensor::matrix({{0, 1}}), Tensor::matrix({{1, 0}}), {{0}}, 0.07);
    EXPECT_NEAR(c.total.item(), 0.0, 1e-12);
}

TEST(Contrastive, NoPositivesIsFlaggedZero) {
    const auto c = contrastive_loss(Tensor::matrix({{0, 1}}), Tensor::matrix({{1, 0}}), {{}}, 0.07);
    EXPECT_TRUE(c.empty);
    EXPECT_EQ(c.total.item(), 0.0);
}

TEST(Contrastive, MatchesExtendedPrecisionOracle) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3, l = 4, d = 5;
        const Tensor o = ops::l2_normalize_rows(lmdetr::testing::random_tensor(rng, {n, d}).detach());
        const Tensor t = ops::l2_normalize_rows(lmdetr::testing::random_tensor(rng, {l, d}).detach());
        const std::vector<std::vector<std::size_t>> pos{{0, 1}, {}, {3}};
        const double tau = 0.07;
        long double sim[3][4];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < l; ++j) {
                long double s = 0;
                for (std::size_t k = 0; k < d; ++k) s += static_cast<long double>(o.at(i, k)) * t.at(j, k);
                sim[i][j] = s / tau;
            }
        }
        long double lo = 0;
        for (std::size_t i : {0u, 2u}) {
            long double z = 0;
            for (std::size_t k = 0; k < l; ++k) z += std::exp(sim[i][k]);
            long double acc = 0;
            for (auto j : pos[i]) acc += -std::log(std::exp(sim[i][j]) / z);
            lo += acc / pos[i].size();
        }
        lo /= 2;
        // tokens 0, 1 -> object 0; token 3 -> object 2
        long double lt = 0;
        for (auto [j, i] : {std::pair<std::size_t, std::size_t>{0, 0}, {1, 0}, {3, 2}}) {
            long double z = 0;
            for (std::size_t k = 0; k < n; ++k) z += std::exp(sim[k][j]);
            lt += -std::log(std::exp(sim[i][j]) / z);
        }
        lt /= 3;
        const auto c = contrastive_loss(o, t, pos, tau);
        EXPECT_NEAR(c.objects.item(), static_cast<double>(lo), 1e-12);
        EXPECT_NEAR(c.tokens.item(), static_cast<double>(lt), 1e-12);
        EXPECT_NEAR(c.total.item(), static_cast<double>((lo + lt) / 2), 1e-12);
    }
}

TEST(Contrastive, InvariantUnderJointPermutation) {
    std::mt19937_64 rng(4);
    const Tensor o = ops::l2_normalize_rows(lmdetr::testing::random_tensor(rng, {3, 4}).detach());
    const Tensor t = ops::l2_normalize_rows(lmdetr::testing::random_tensor(rng, {5, 4}).detach());
    const std::vector<std::vector<std::size_t>> pos{{0}, {1, 2}, {4}};
    const std::vector<std::size_t> perm{2, 0, 1};
    std::vector<std::vector<std::size_t>> pos_p;
    for (auto p : perm) pos_p.push_back(pos[p]);
    const double a = contrastive_loss(o, t, pos, 0.07).total.item();
    const double b = contrastive_loss(ops::gather_rows(o, perm), t, pos_p, 0.07).total.item();
    EXPECT_NEAR(a, b, 1e-12);
    EXPECT_GE(a, 0.0);
}

TEST(Contrastive, DefaultTemperature) { EXPECT_EQ(LossWeights{}.temperature, 0.07); }

TEST(TotalLoss, WeightMaskingAndBookkeeping) {
    Predictions p = uniform_predictions(3, 6, 5);
    p.boxes = Tensor({3, 4}, {0.3, 0.3, 0.2, 0.2, 0.6, 0.6, 0.3, 0.2, 0.5, 0.5, 0.5, 0.5});
    GroundTruth gt{{Box{0.35, 0.3, 0.2, 0.25}, Box{0.6, 0.55, 0.3, 0.2}}, {{0, 1}, {3}}};
    LossWeights only_l1{.l1 = 5.0, .giou = 0.0, .soft_token = 0.0, .contrastive = 0.0};
    const LossReport a = total_loss(p, gt, only_l1);
    EXPECT_EQ(a.total.item(), 5.0 * a.l1.item());

    const LossWeights w;
    const LossReport r = total_loss(p, gt, w);
    const double rebuilt =
        w.l1 * r.l1.item() + w.giou * r.giou.item() + w.soft_token * r.soft_token.item() +
        w.contrastive * r.contrastive.item();
    EXPECT_EQ(r.total.item(), rebuilt);
    EXPECT_EQ(r.match.pairs.size(), 2u);
    for (const Tensor* t : {&r.l1, &r.giou, &r.soft_token, &r.contrastive}) {
        EXPECT_TRUE(std::isfinite(t->item()));
        EXPECT_GE(t->item(), 0.0);
    }
}

TEST(TotalLoss, PerfectPredictionsReachEntropyFloor) {
    // Two objects on queries 0 and 1 of 3; spans {0, 1} and {3}; 5 tokens.
    const std::size_t q = 3, slots = 6, tokens = 5, dc = 6;
    GroundTruth gt{{Box{0.3, 0.3, 0.2, 0.2}, Box{0.7, 0.6, 0.2, 0.3}}, {{0, 1}, {3}}};
    Predictions p;
    p.boxes = Tensor({q, 4}, {0.3, 0.3, 0.2, 0.2, 0.7, 0.6, 0.2, 0.3, 0.5, 0.5, 0.1, 0.1});
    const double big = 1e3;
    std::vector<double> logits(q * slots, -big);
    logits[0] = logits[1] = 0.0;
    logits[slots + 3] = 0.0;
    logits[2 * slots + 5] = 0.0;
    p.token_logits = Tensor({q, slots}, logits);
    // Orthogonal directions: object i aligned with its tokens only. Cosine
    // logits are bounded by 1 / tau, so some mass leaks to the other tokens.
    std::vector<double> o(q * dc, 0.0), t(tokens * dc, 0.0);
    o[0 * dc + 0] = 1;
    o[1 * dc + 1] = 1;
    o[2 * dc + 2] = 1;
    t[0 * dc + 0] = t[1 * dc + 0] = 1;
    t[3 * dc + 1] = 1;
    t[2 * dc + 3] = t[4 * dc + 4] = 1;
    p.object_embed = Tensor({q, dc}, o);
    p.token_embed = Tensor({tokens, dc}, t);
    const LossWeights w;
    const LossReport r = total_loss(p, gt, w);
    EXPECT_NEAR(r.l1.item(), 0.0, 1e-12);
    EXPECT_NEAR(r.giou.item(), 0.0, 1e-12);
    EXPECT_NEAR(r.soft_token.item(), std::log(2.0) / 3.0, 1e-6);
    // Closed form of the leak with similarities 1/tau on positives, 0 elsewhere.
    const double e = std::exp(1.0 / w.temperature);
    const double lo0 = -std::log(e / (2 * e + 3)), lo1 = -std::log(e / (e + 4));
    const double lt = -std::log(e / (e + 2));
    const double expected = 0.5 * ((lo0 + lo1) / 2 + lt);
    EXPECT_NEAR(r.contrastive.item(), expected, 1e-6);
    EXPECT_NEAR(r.total.item(), w.soft_token * std::log(2.0) / 3.0 + w.contrastive * expected, 1e-6);
}

TEST(TotalLoss, EmptyGroundTruthTrainsEveryQueryTowardNull) {
    const Predictions p = uniform_predictions(4, 6, 5);
    const LossReport r = total_loss(p, GroundTruth{}, LossWeights{});
    EXPECT_TRUE(r.empty);
    EXPECT_EQ(r.l1.item(), 0.0);
    EXPECT_EQ(r.contrastive.item(), 0.0);
    EXPECT_NEAR(r.soft_token.item(), std::log(6.0), 1e-12);
}

TEST(TotalLoss, MatchingIsStableUnderSmallPerturbation) {
    std::mt19937_64 rng(6);
    Predictions p = uniform_predictions(5, 6, 5);
    p.boxes = lmdetr::testing::random_tensor(rng, {5, 4}, 0.1, 0.9).detach();
    p.token_logits = lmdetr::testing::random_tensor(rng, {5, 6}).detach();
    GroundTruth gt{{Box{0.3, 0.3, 0.2, 0.2}, Box{0.7, 0.6, 0.2, 0.3}}, {{0, 1}, {3}}};
    const auto first = total_loss(p, gt, LossWeights{}).match;
    auto data = p.boxes.mutable_data();
    for (auto& v : data) v += 1e-9;
    EXPECT_EQ(total_loss(p, gt, LossWeights{}).match.pairs, first.pairs);
}
