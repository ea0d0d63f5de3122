// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fd.hpp"
#include "lmdetr/config.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/losses.hpp"
#include "lmdetr/model.hpp"
#include "lmdetr/ops.hpp"

using namespace lmdetr;

namespace {

RunConfig tiny(Variant v = Variant::light) {
    RunConfig c = tiny_config();
    c.model.variant = v;
    return resolved(c);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) { return ops::gather_rows(x, perm); }

void fill(Tensor t, double v) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), v);
}

}  // namespace

// ---- backbone stand-ins ----

TEST(TextStub, DeterministicAndPositionSensitive) {
    const RunConfig c = tiny();
    const Model a(c.model, 3), b(c.model, 3);
    const std::vector<std::size_t> tokens{1, 4, 5, 2};
    const TextFeatures fa = encode_text(tokens, a.text_stub());
    const TextFeatures fb = encode_text(tokens, b.text_stub());
    EXPECT_EQ(max_abs_diff(fa.features, fb.features), 0.0);
    std::vector<std::size_t> swapped{4, 1, 5, 2};
    const TextFeatures fs = encode_text(swapped, a.text_stub());
    EXPECT_GT(max_abs_diff(fa.features, fs.features), 1e-6);
    const TextFeatures one = encode_text(std::vector<std::size_t>{3}, a.text_stub());
    EXPECT_EQ(one.features.shape(), (Shape{1, c.model.d_backbone_txt}));
    EXPECT_EQ(one.positions.shape(), (Shape{1, c.model.d_model}));
}

TEST(TextStub, RejectsBadCaptions) {
    const RunConfig c = tiny();
    const Model m(c.model, 3);
    EXPECT_THROW(encode_text(std::vector<std::size_t>{}, m.text_stub()), InputError);
    EXPECT_THROW(encode_text(std::vector<std::size_t>{c.model.vocab_size}, m.text_stub()), InputError);
    EXPECT_THROW(encode_text(std::vector<std::size_t>(c.model.max_tokens + 1, 1), m.text_stub()), InputError);
    EXPECT_NO_THROW(encode_text(std::vector<std::size_t>(c.model.max_tokens, 1), m.text_stub()));
}

TEST(ImageStub, ShapesDeterminismAndBlankRaster) {
    const RunConfig c = tiny();
    const Model m(c.model, 3);
    const Scene s = generate(c.data, 0);
    const ImageFeatures a = encode_image(s, m.image_stub()), b = encode_image(s, m.image_stub());
    EXPECT_EQ(a.features.shape(), (Shape{c.model.grid_rows() * c.model.grid_cols(), c.model.d_backbone_img}));
    EXPECT_EQ(max_abs_diff(a.features, b.features), 0.0);
    Raster blank = s.raster;
    std::fill(blank.values.begin(), blank.values.end(), 0);
    const ImageFeatures z = encode_image(blank, m.image_stub());
    for (std::size_t r = 1; r < z.features.rows(); ++r) {
        for (std::size_t j = 0; j < z.features.cols(); ++j) EXPECT_EQ(z.features.at(r, j), z.features.at(0, j));
    }
}

TEST(ImageStub, WrongRasterIsDimensionError) {
    const RunConfig c = tiny();
    const Model m(c.model, 3);
    Raster r{c.model.raster_rows + 2, c.model.raster_cols, 3, {}};
    r.values.assign(r.rows * r.cols * 3, 0);
    EXPECT_THROW(encode_image(r, m.image_stub()), DimensionError);
}

TEST(Backbone, FrozenUnlessFullTrain) {
    for (Variant v : {Variant::light, Variant::plus, Variant::full_train}) {
        const Model m(tiny(v).model, 3);
        for (const auto& e : m.registry().entries()) {
            const bool stub = e.name.starts_with("image_backbone.") || e.name.starts_with("text_backbone.");
            if (stub) EXPECT_EQ(e.trainable, v == Variant::full_train) << e.name;
        }
    }
}

TEST(Backbone, ProjectionRejectsWrongWidth) {
    const Model m(tiny().model, 3);
    const Tensor x = Tensor::zeros({2, m.config().d_backbone_txt});
    EXPECT_THROW(project_to_shared(x, Modality::image, m.shared().projection), DimensionError);
    EXPECT_EQ(project_to_shared(x, Modality::text, m.shared().projection).shape(), (Shape{2, m.config().d_model}));
}

TEST(Positions, BoundedAndDistinct) {
    const Tensor p = sinusoidal_2d(4, 4, 16);
    for (double v : p.data()) EXPECT_LE(std::abs(v), 1.0);
    for (std::size_t a = 0; a < p.rows(); ++a) {
        for (std::size_t b = a + 1; b < p.rows(); ++b) {
            EXPECT_GT(max_abs_diff(ops::slice_rows(p, a, 1), ops::slice_rows(p, b, 1)), 1e-6);
        }
    }
    const Tensor q = sinusoidal_1d(8, 16);
    EXPECT_EQ(q.shape(), (Shape{8, 16}));
    EXPECT_EQ(q.at(0, 0), 0.0);
    EXPECT_EQ(q.at(0, 1), 1.0);
}

// ---- fusion and the shared encoder ----

TEST(Fuse, Identities) {
    std::mt19937_64 rng(1);
    const Tensor x = lmdetr::testing::random_tensor(rng, {3, 4}).detach();
    EXPECT_EQ(max_abs_diff(fuse(x, Tensor::zeros({4}), FusionKind::add), x), 0.0);
    EXPECT_EQ(max_abs_diff(fuse(x, Tensor::filled({4}, 1.0), FusionKind::mul), x), 0.0);
    const Tensor y = fuse(Tensor::matrix({{1, 2}}), Tensor::vector({10, 20}), FusionKind::add);
    EXPECT_EQ(y.at(0, 0), 11.0);
    EXPECT_EQ(y.at(0, 1), 22.0);
    const Tensor c = fuse(x, Tensor::vector({5, 6, 7, 8}), FusionKind::concat);
    EXPECT_EQ(c.shape(), (Shape{3, 8}));
    EXPECT_EQ(c.at(2, 4), 5.0);
    EXPECT_EQ(c.at(1, 1), x.at(1, 1));
    EXPECT_THROW(fuse(x, Tensor::zeros({4}), FusionKind::cross_attention), ContractError);
}

TEST(Fuse, EveryKindKeepsModelWidth) {
    for (FusionKind k : {FusionKind::add, FusionKind::mul, FusionKind::concat, FusionKind::cross_attention}) {
        RunConfig c = tiny();
        c.model.fusion = k;
        const Model m(c.model, 2);
        const Tensor x = Tensor::filled({5, c.model.d_model}, 0.3);
        EXPECT_EQ(m.shared().fusion(x, m.shared().tokens.image).shape(), x.shape()) << to_string(k);
    }
}

TEST(Fuse, CrossAttentionKindIsResidualValuePath) {
    RunConfig c = tiny();
    c.model.fusion = FusionKind::cross_attention;
    const Model m(c.model, 2);
    const FusionLayer& f = m.shared().fusion;
    std::mt19937_64 rng(3);
    const Tensor x = lmdetr::testing::random_tensor(rng, {4, c.model.d_model}).detach();
    const Tensor t = m.shared().tokens.text;
    const Tensor row = f.output(f.value(ops::reshape(t, {1, c.model.d_model})));
    const Tensor got = f(x, t);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < c.model.d_model; ++j) EXPECT_NEAR(got.at(i, j), x.at(i, j) + row.at(0, j), 1e-12);
    }
}

TEST(UP, EqualTokensGiveEqualOutputs) {
    const Model m(tiny().model, 5);
    const SharedEncoder& enc = m.shared();
    std::mt19937_64 rng(2);
    const Tensor x = lmdetr::testing::random_tensor(rng, {6, m.config().d_model}).detach();
    const Tensor a = enc.up(enc.fusion(x, enc.tokens.image));
    const Tensor same = enc.up(enc.fusion(x, enc.tokens.image.detach()));
    EXPECT_EQ(max_abs_diff(a, same), 0.0);
    const Tensor b = enc.up(enc.fusion(x, enc.tokens.text));
    EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(UP, PermutationEquivariant) {
    const Model m(tiny().model, 5);
    std::mt19937_64 rng(9);
    const Tensor x = lmdetr::testing::random_tensor(rng, {6, m.config().d_model}).detach();
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    const Tensor a = permute_rows(m.shared().up(x), perm);
    const Tensor b = m.shared().up(permute_rows(x, perm));
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(CrossFusion, MatchesStepByStepOracle) {
    RunConfig c = tiny(Variant::plus);
    const Model m(c.model, 4);
    const CrossFusion& cf = *m.shared().cross;
    std::mt19937_64 rng(6);
    const std::size_t d = c.model.d_model;
    const Tensor o = lmdetr::testing::random_tensor(rng, {5, d}).detach();
    const Tensor t = lmdetr::testing::random_tensor(rng, {3, d}).detach();
    // Single head: A = (O Wq)(T Wq')^T / sqrt(d).
    const Tensor oq = ops::matmul(o, cf.q_image.weight), tq = ops::matmul(t, cf.q_text.weight);
    const Tensor attn = ops::scale(ops::matmul(oq, ops::transpose(tq)), 1.0 / std::sqrt(static_cast<double>(d)));
    const Tensor of = ops::matmul(ops::matmul(ops::softmax(attn, 1), ops::matmul(t, cf.v_text.weight)),
                                  cf.out_image.weight);
    const Tensor tf = ops::matmul(
        ops::matmul(ops::softmax(ops::transpose(attn), 1), ops::matmul(o, cf.v_image.weight)), cf.out_text.weight);
    const CrossFused got = cross_fuse(o, t, cf);
    EXPECT_LT(max_abs_diff(got.image, of), 1e-12);
    EXPECT_LT(max_abs_diff(got.text, tf), 1e-12);

    const auto [wi, wt] = cross_attention_weights(o, t, cf);
    EXPECT_EQ(wi.shape(), (Shape{5, 3}));
    EXPECT_EQ(wt.shape(), (Shape{3, 5}));
    for (const Tensor* w : {&wi, &wt}) {
        for (std::size_t r = 0; r < w->rows(); ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < w->cols(); ++j) s += w->at(r, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(CrossFusion, RejectsWrongWidths) {
    const Model m(tiny(Variant::plus).model, 4);
    EXPECT_THROW(cross_fuse(Tensor::zeros({2, 3}), Tensor::zeros({2, m.config().d_model}), *m.shared().cross),
                 DimensionError);
}

TEST(Plus, ReducesToLightWhenCrossPathIsSilent) {
    const RunConfig c = tiny(Variant::plus);
    Model plus(c.model, 11);
    const Model light(tiny(Variant::light).model, 11);
    for (auto& e : plus.registry().entries()) {
        const bool silent_proj = e.name.starts_with("plus.") && (e.name.find(".attn.o.") != std::string::npos ||
                                                                  e.name.find(".ffn.down.") != std::string::npos);
        if (e.name.starts_with("cross_fusion.out_") || silent_proj) {
            fill(e.tensor, 0.0);
        }
    }
    const Scene s = generate(c.data, 1);
    const Predictions a = plus.forward(s), b = light.forward(s);
    EXPECT_LT(max_abs_diff(a.boxes, b.boxes), 1e-12);
    EXPECT_LT(max_abs_diff(a.token_logits, b.token_logits), 1e-12);
}

TEST(ModalityTokens, BothReceiveGradient) {
    for (Variant v : {Variant::light, Variant::plus}) {
        RunConfig c = tiny(v);
        Model m(c.model, 8);
        m.registry().zero_grad();
        {
            Tape tape;
            TapeScope scope(tape);
            const Scene s = generate(c.data, 0);
            tape.backward(total_loss(m.forward(s), ground_truth(s), c.loss).total);
        }
        for (const Tensor& t : {m.shared().tokens.image, m.shared().tokens.text}) {
            ASSERT_TRUE(t.has_grad());
            double n = 0.0;
            for (double g : t.grad()) n += g * g;
            EXPECT_GT(n, 0.0);
        }
    }
}

TEST(FullTrain, HasNoSharedEncoderWeights) {
    const Model m(tiny(Variant::full_train).model, 1);
    for (const auto& e : m.registry().entries()) {
        EXPECT_FALSE(e.name.starts_with("modality_token.")) << e.name;
        EXPECT_FALSE(e.name.starts_with("up.")) << e.name;
    }
    const Scene s = generate(tiny().data, 0);
    EXPECT_EQ(m.forward(s).boxes.rows(), m.config().num_queries);
}

// ---- detection head ----

TEST(Detection, ShapesAndRanges) {
    for (Variant v : {Variant::light, Variant::plus, Variant::full_train}) {
        const RunConfig c = tiny(v);
        const Model m(c.model, 2);
        const Scene s = generate(c.data, 2);
        const Predictions p = m.forward(s);
        const std::size_t q = c.model.num_queries;
        EXPECT_EQ(p.boxes.shape(), (Shape{q, 4}));
        EXPECT_EQ(p.token_logits.shape(), (Shape{q, c.model.max_tokens + 1}));
        EXPECT_EQ(p.object_embed.shape(), (Shape{q, c.model.d_contrastive}));
        EXPECT_EQ(p.token_embed.shape(), (Shape{s.tokens.size(), c.model.d_contrastive}));
        for (double b : p.boxes.data()) {
            EXPECT_GT(b, 0.0);
            EXPECT_LT(b, 1.0);
        }
        for (const Tensor* e : {&p.object_embed, &p.token_embed}) {
            for (std::size_t r = 0; r < e->rows(); ++r) {
                double n = 0.0;
                for (std::size_t j = 0; j < e->cols(); ++j) n += e->at(r, j) * e->at(r, j);
                EXPECT_NEAR(n, 1.0, 1e-12);
            }
        }
    }
}

TEST(Detection, ConfidenceAndPhraseScore) {
    Predictions p;
    p.boxes = Tensor::filled({2, 4}, 0.5);
    // Query 0: one-hot on position 1. Query 1: uniform over 3 tokens + null.
    p.token_logits = Tensor::matrix({{-1e3, 1e3, -1e3, -1e3}, {0, 0, 0, 0}});
    const auto conf = box_confidence(p);
    EXPECT_NEAR(conf[0], 1.0, 1e-12);
    EXPECT_NEAR(conf[1], 0.75, 1e-12);
    const auto one = phrase_score(p, {1, 2});
    EXPECT_NEAR(one[0], 1.0, 1e-12);
    EXPECT_NEAR(one[1], 0.25, 1e-12);
    const auto all = phrase_score(p, {0, 3});
    for (std::size_t q = 0; q < 2; ++q) EXPECT_NEAR(all[q], conf[q], 1e-12);
    EXPECT_THROW(phrase_score(p, {2, 2}), InputError);
    EXPECT_THROW(phrase_score(p, {2, 4}), InputError);
}

TEST(Detection, RejectsTooManyTextRows) {
    const Model m(tiny().model, 2);
    const std::size_t d = m.config().d_model;
    EXPECT_THROW(detect(Tensor::zeros({4, d}), Tensor::zeros({m.config().max_tokens + 1, d}), Tensor(), Tensor(),
                        m.head()),
                 InputError);
}

TEST(Detection, QueryPermutationPermutesOutputs) {
    const RunConfig c = tiny();
    Model m(c.model, 2);
    const Scene s = generate(c.data, 3);
    const Predictions before = m.forward(s);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor permuted = permute_rows(m.head().queries.detach(), perm);
    auto q = m.registry().get("head.queries").mutable_data();
    std::copy(permuted.data().begin(), permuted.data().end(), q.begin());
    const Predictions after = m.forward(s);
    EXPECT_LT(max_abs_diff(after.boxes, permute_rows(before.boxes, perm)), 1e-12);
    EXPECT_LT(max_abs_diff(after.token_logits, permute_rows(before.token_logits, perm)), 1e-12);
    EXPECT_LT(max_abs_diff(after.token_embed, before.token_embed), 1e-12);
}
