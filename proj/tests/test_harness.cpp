// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "lmdetr/checkpoint.hpp"
#include "lmdetr/config.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/metrics.hpp"
#include "lmdetr/report.hpp"
#include "lmdetr/train.hpp"

using namespace lmdetr;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::path(LMDETR_TEST_TMP) / name; }

// ---- hand enumeration of parameter counts ----

std::size_t linear(std::size_t in, std::size_t out, bool bias = true) { return in * out + (bias ? out : 0); }
std::size_t norm(std::size_t d) { return 2 * d; }
// q, v, o with bias; k without.
std::size_t mha(std::size_t d) { return 3 * linear(d, d) + linear(d, d, false); }
std::size_t ffn(std::size_t d, std::size_t f) { return linear(d, f) + linear(f, d); }
std::size_t encoder_block(std::size_t d, std::size_t f) { return 2 * norm(d) + mha(d) + ffn(d, f); }
std::size_t decoder_block(std::size_t d, std::size_t f) { return 3 * norm(d) + 2 * mha(d) + ffn(d, f); }

struct Counts {
    std::size_t trainable_backbone = 0, frozen_backbone = 0, head = 0;
};

Counts enumerate(const ModelConfig& m) {
    const std::size_t d = m.d_model;
    const std::size_t image = linear(m.patch_width(), m.image_hidden) + linear(m.image_hidden, m.d_backbone_img);
    const std::size_t text = m.vocab_size * m.d_backbone_txt + m.text_layers * encoder_block(m.d_backbone_txt, m.text_ffn);
    std::size_t shared = 0;
    if (m.variant != Variant::full_train) {
        shared += 2 * d;  // modality tokens
        if (m.fusion == FusionKind::concat) shared += linear(2 * d, d);
        if (m.fusion == FusionKind::cross_attention) shared += 2 * linear(d, d, false);
        shared += m.up_layers * encoder_block(d, m.up_ffn) + norm(d);
        if (m.variant == Variant::plus) shared += 6 * linear(d, d, false) + 2 * encoder_block(d, m.plus_ffn);
    }
    std::size_t head = linear(m.d_backbone_img, d) + linear(m.d_backbone_txt, d);
    head += m.encoder_layers * encoder_block(d, m.head_ffn) + norm(d);
    head += m.decoder_layers * decoder_block(d, m.head_ffn) + norm(d);
    head += m.num_queries * d;
    head += 2 * linear(d, d) + linear(d, 4);
    head += linear(d, m.max_tokens + 1);
    head += 2 * linear(d, m.d_contrastive);
    Counts c;
    c.head = head;
    if (m.variant == Variant::full_train) {
        c.trainable_backbone = image + text;
    } else {
        c.trainable_backbone = shared;
        c.frozen_backbone = image + text;
    }
    return c;
}

void expect_counts(const ModelConfig& m) {
    const Counts want = enumerate(m);
    const ParamReport got = count_params(m);
    EXPECT_EQ(got.trainable_backbone, want.trainable_backbone) << to_string(m.variant);
    EXPECT_EQ(got.frozen_backbone, want.frozen_backbone) << to_string(m.variant);
    EXPECT_EQ(got.head, want.head) << to_string(m.variant);
    EXPECT_EQ(got.grand_total, want.trainable_backbone + want.frozen_backbone + want.head);
    EXPECT_EQ(got.trainable_total, got.grand_total - got.frozen_backbone);
}

RunConfig small_run() {
    RunConfig c = tiny_config();
    c.model.variant = Variant::light;
    c.train.steps = 12;
    c.train.batch_size = 4;
    c.optim.lr = 1e-3;
    return resolved(c);
}

std::vector<ScenePrediction> oracle_predictions(const std::vector<Scene>& scenes, std::size_t q, std::size_t slots) {
    std::vector<ScenePrediction> out;
    for (const auto& s : scenes) {
        ScenePrediction p;
        p.scene_id = s.id;
        for (std::size_t i = 0; i < q; ++i) {
            std::vector<double> probs(slots, 0.0);
            if (i < s.objects.size()) {
                p.boxes.push_back(s.objects[i].box);
                for (auto t = s.objects[i].span.begin; t < s.objects[i].span.end; ++t) probs[t] = 0.5;
            } else {
                p.boxes.push_back({0.5, 0.5, 0.01, 0.01});
                probs.back() = 1.0;
            }
            p.token_probs.push_back(probs);
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace

// ---- configuration ----

TEST(Config, RoundTripsThroughJson) {
    RunConfig c = desk_config();
    c.model.fusion = FusionKind::concat;
    c.train.lr_drop_step = 77;
    nlohmann::json j = c;
    const RunConfig back = parse_config(j);
    EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config(nlohmann::json{{"model", {{"d_modle", 64}}}}), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json{{"nonsense", 1}}), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json{{"model", {{"d_model", "wide"}}}}), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json{{"model", {{"variant", "heavy"}}}}), ConfigError);
    RunConfig c = desk_config();
    c.model.up_heads = 5;  // 64 is not divisible by 5
    EXPECT_THROW(validate(resolved(c)), ConfigError);
    RunConfig q = desk_config();
    q.model.num_queries = 2;  // fewer queries than objects
    EXPECT_THROW(validate(resolved(q)), ConfigError);
}

TEST(Config, MissingFileIsConfigError) { EXPECT_THROW(load_config(tmp("missing_config.json")), ConfigError); }

// ---- parameter accounting ----

TEST(CountParams, MatchesHandEnumeration) {
    RunConfig tiny_light = resolved(tiny_config());
    tiny_light.model.variant = Variant::light;
    expect_counts(tiny_light.model);

    RunConfig desk_plus = resolved(desk_config());
    desk_plus.model.variant = Variant::plus;
    desk_plus.model.fusion = FusionKind::concat;
    expect_counts(desk_plus.model);

    RunConfig paper_full = resolved(paper_scale_config());
    paper_full.model.variant = Variant::full_train;
    expect_counts(paper_full.model);
}

TEST(CountParams, PlusAddsExactlyTheCrossAndProjectionWeights) {
    RunConfig c = resolved(desk_config());
    const std::size_t d = c.model.d_model;
    const ParamReport light = count_params(c.model);
    c.model.variant = Variant::plus;
    const ParamReport plus = count_params(c.model);
    EXPECT_EQ(plus.grand_total - light.grand_total, 6 * d * d + 2 * encoder_block(d, c.model.plus_ffn));
    EXPECT_EQ(plus.head, light.head);
}

TEST(CountParams, LightBackboneIsSmallFractionOfFullTrainAtPaperScale) {
    RunConfig c = resolved(paper_scale_config());
    const ParamReport light = count_params(c.model);
    c.model.variant = Variant::full_train;
    const ParamReport full = count_params(c.model);
    EXPECT_LT(static_cast<double>(light.trainable_backbone), 0.1 * static_cast<double>(full.trainable_backbone));
}

TEST(CountParams, ShapeOnlyMatchesAllocatedModel) {
    const RunConfig c = small_run();
    const Model m(c.model, 3);
    EXPECT_EQ(param_report(m.registry()).grand_total, count_params(c.model).grand_total);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripIsBitExact) {
    const RunConfig c = small_run();
    Model a(c.model, 5);
    Model b(c.model, 6);
    const auto path = tmp("roundtrip.ckpt");
    save_checkpoint(path, a.registry());
    load_checkpoint(path, b.registry());
    for (std::size_t i = 0; i < a.registry().size(); ++i) {
        const auto& ea = a.registry().entries()[i];
        const auto& eb = b.registry().entries()[i];
        ASSERT_EQ(ea.name, eb.name);
        ASSERT_EQ(0, std::memcmp(ea.tensor.data().data(), eb.tensor.data().data(), ea.count() * sizeof(double)));
    }
    const Scene s = generate(c.data, 0);
    const Predictions pa = a.forward(s), pb = b.forward(s);
    for (std::size_t i = 0; i < pa.boxes.numel(); ++i) EXPECT_EQ(pa.boxes.at(i), pb.boxes.at(i));
}

TEST(Checkpoint, MismatchedModelIsLoadErrorNamingTensor) {
    RunConfig c = small_run();
    const Model a(c.model, 5);
    const auto path = tmp("mismatch.ckpt");
    save_checkpoint(path, a.registry());
    c.model.d_contrastive = 4;
    Model b(c.model, 5);
    const auto before = b.registry().get("head.queries").detach();
    try {
        load_checkpoint(path, b.registry());
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("head.contrastive_image.weight"), std::string::npos) << e.what();
    }
    // Nothing is overwritten before validation finishes.
    const auto after = b.registry().get("head.queries");
    for (std::size_t i = 0; i < after.numel(); ++i) EXPECT_EQ(after.at(i), before.at(i));
}

TEST(Checkpoint, TruncatedFileIsLoadError) {
    const RunConfig c = small_run();
    const Model a(c.model, 5);
    const auto path = tmp("truncated.ckpt");
    save_checkpoint(path, a.registry());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
    EXPECT_THROW(read_archive(path), LoadError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPT";
    }
    EXPECT_THROW(read_archive(path), LoadError);
}

// ---- metrics ----

TEST(Metrics, OraclePredictionsGivePerfectScores) {
    SplitSpec spec;
    spec.n_train = 40;
    const auto scenes = generate_split(spec, Split::train);
    const Vocabulary vocab = make_vocabulary(spec);
    const auto preds = oracle_predictions(scenes, 16, 33);
    const MetricsReport r = evaluate(scenes, preds, EvalConfig{});
    EXPECT_GT(r.phrases, 40u);
    EXPECT_EQ(r.recall.at(1), 1.0);
    EXPECT_EQ(r.mean_iou_top1, 1.0);
    EXPECT_EQ(r.top1_hit_rate.at(0.9), 1.0);
    EXPECT_EQ(r.precision.at(1), 1.0);
}

TEST(Metrics, RecallIsMonotoneInK) {
    const RunConfig c = small_run();
    const Model m(c.model, 9);
    const auto scenes = generate_split(c.data, Split::train);
    const MetricsReport r = evaluate(m, scenes, EvalConfig{.ks = {1, 2, 3, 4}});
    EXPECT_LE(r.recall.at(1), r.recall.at(2));
    EXPECT_LE(r.recall.at(2), r.recall.at(3));
    EXPECT_LE(r.recall.at(3), r.recall.at(4));
}

TEST(Metrics, RandomRankingRecallClosedForm) {
    // One phrase, Q = 4, exactly one box clears the threshold: R@1 = 1/4, R@2 = 1/2.
    SplitSpec spec;
    spec.min_objects = spec.max_objects = 1;
    const std::vector<Scene> scenes{generate(spec, 0)};
    ScenePrediction p;
    p.scene_id = scenes[0].id;
    p.boxes = {scenes[0].objects[0].box, {0.9, 0.9, 0.05, 0.05}, {0.9, 0.1, 0.05, 0.05}, {0.1, 0.9, 0.05, 0.05}};
    p.token_probs.assign(4, std::vector<double>(33, 1.0 / 33.0));
    EXPECT_NEAR(random_ranking_recall(scenes, {p}, 1, 0.5), 0.25, 1e-15);
    EXPECT_NEAR(random_ranking_recall(scenes, {p}, 2, 0.5), 0.5, 1e-15);
    EXPECT_NEAR(random_ranking_recall(scenes, {p}, 4, 0.5), 1.0, 1e-15);
}

TEST(Metrics, ConfidenceFilterDropsLowConfidenceQueries) {
    SplitSpec spec;
    spec.min_objects = spec.max_objects = 1;
    const std::vector<Scene> scenes{generate(spec, 1)};
    auto preds = oracle_predictions(scenes, 3, 33);
    // The right box now carries most of its mass on no-object.
    auto& probs = preds[0].token_probs[0];
    std::fill(probs.begin(), probs.end(), 0.0);
    probs[scenes[0].objects[0].span.begin] = 0.2;
    probs.back() = 0.8;
    EXPECT_EQ(evaluate(scenes, preds, EvalConfig{}).recall.at(1), 1.0);
    EXPECT_EQ(evaluate(scenes, preds, EvalConfig{.confidence_threshold = 0.7}).recall.at(1), 0.0);
}

// ---- training ----

TEST(Train, SameSeedGivesBitIdenticalCurves) {
    const RunConfig c = small_run();
    const auto scenes = generate_split(c.data, Split::train);
    auto run = [&]() {
        Model m(c.model, c.seed);
        Adam adam(c.optim);
        return train(m, adam, scenes, c).curve;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), c.train.steps);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(std::memcmp(&a[i].total, &b[i].total, sizeof(double)), 0) << i;
    }
}

TEST(Train, ResumeContinuesTheSameCurve) {
    const RunConfig c = small_run();
    const auto scenes = generate_split(c.data, Split::train);
    Model full(c.model, c.seed);
    Adam full_adam(c.optim);
    const auto whole = train(full, full_adam, scenes, c).curve;

    RunConfig first = c;
    first.train.steps = 5;
    Model m(c.model, c.seed);
    Adam adam(c.optim);
    train(m, adam, scenes, first);
    const auto dir = tmp("resume");
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "model.ckpt", m.registry());
    save_optimizer(dir / "optimizer.ckpt", adam);

    Model resumed(c.model, c.seed + 1);
    Adam resumed_adam(c.optim);
    load_checkpoint(dir / "model.ckpt", resumed.registry());
    load_optimizer(dir / "optimizer.ckpt", resumed_adam);
    const auto rest = train(resumed, resumed_adam, scenes, c).curve;
    ASSERT_EQ(rest.size(), c.train.steps - 5);
    for (std::size_t i = 0; i < rest.size(); ++i) {
        EXPECT_EQ(rest[i].step, whole[i + 5].step);
        EXPECT_EQ(rest[i].total, whole[i + 5].total) << "step " << rest[i].step;
    }
}

TEST(Train, FreezeAuditDetectsDrift) {
    const RunConfig c = small_run();
    Model m(c.model, 1);
    const FreezeAudit audit(m.registry());
    EXPECT_GT(audit.tensors(), 0u);
    EXPECT_TRUE(audit.drifted(m.registry()).empty());
    auto data = m.registry().get("text_backbone.embedding").mutable_data();
    data[0] = std::nextafter(data[0], 1e9);
    ASSERT_EQ(audit.drifted(m.registry()), std::vector<std::string>{"text_backbone.embedding"});
    EXPECT_THROW(audit.check(m.registry()), TrainingError);
}

TEST(Train, LossLogRoundTrips) {
    const RunConfig c = small_run();
    Model m(c.model, 2);
    Adam adam(c.optim);
    const auto curve = train(m, adam, generate_split(c.data, Split::train), c).curve;
    const auto path = tmp("loss_log.tsv");
    write_loss_log(path, curve);
    const auto back = read_loss_log(path);
    ASSERT_EQ(back.size(), curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        EXPECT_EQ(back[i].total, curve[i].total);
        EXPECT_EQ(back[i].contrastive, curve[i].contrastive);
        EXPECT_EQ(back[i].lr, curve[i].lr);
    }
}

TEST(Train, LearningRateSchedule) {
    RunConfig c = desk_config();
    c.optim.lr = 1e-3;
    c.train.warmup_steps = 10;
    c.train.lr_drop_step = 100;
    EXPECT_NEAR(learning_rate(c, 1), 1e-4, 1e-18);
    EXPECT_NEAR(learning_rate(c, 10), 1e-3, 1e-18);
    EXPECT_NEAR(learning_rate(c, 100), 1e-3, 1e-18);
    EXPECT_NEAR(learning_rate(c, 101), 1e-4, 1e-18);
}

TEST(Train, EpochOrderIsAPermutation) {
    auto order = epoch_order(3, 0, 50);
    EXPECT_EQ(order, epoch_order(3, 0, 50));
    EXPECT_NE(order, epoch_order(3, 1, 50));
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}
