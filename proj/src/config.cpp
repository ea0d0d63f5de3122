// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "lmdetr/errors.hpp"

namespace lmdetr {

using nlohmann::json;

const char* to_string(Variant v) {
    switch (v) {
        case Variant::light:
            return "light";
        case Variant::plus:
            return "plus";
        case Variant::full_train:
            return "full_train";
    }
    return "?";
}

const char* to_string(FusionKind f) {
    switch (f) {
        case FusionKind::add:
            return "add";
        case FusionKind::mul:
            return "mul";
        case FusionKind::concat:
            return "concat";
        case FusionKind::cross_attention:
            return "cross_attention";
    }
    return "?";
}

const char* to_string(PositionMode p) { return p == PositionMode::head ? "head" : "before_up"; }

Variant parse_variant(const std::string& s) {
    if (s == "light") return Variant::light;
    if (s == "plus") return Variant::plus;
    if (s == "full_train") return Variant::full_train;
    throw ConfigError("unknown model variant '" + s + "' (light|plus|full_train)");
}

FusionKind parse_fusion(const std::string& s) {
    if (s == "add") return FusionKind::add;
    if (s == "mul") return FusionKind::mul;
    if (s == "concat") return FusionKind::concat;
    if (s == "cross_attention") return FusionKind::cross_attention;
    throw ConfigError("unknown fusion kind '" + s + "' (add|mul|concat|cross_attention)");
}

PositionMode parse_position_mode(const std::string& s) {
    if (s == "head") return PositionMode::head;
    if (s == "before_up") return PositionMode::before_up;
    throw ConfigError("unknown position mode '" + s + "' (head|before_up)");
}

std::size_t TrainConfig::total_steps(std::size_t n_train) const {
    if (epochs == 0) return steps;
    return epochs * ((n_train + batch_size - 1) / batch_size);
}

namespace {

json model_json(const ModelConfig& m) {
    return json{{"variant", to_string(m.variant)},
                {"fusion", to_string(m.fusion)},
                {"position_mode", to_string(m.position_mode)},
                {"raster_rows", m.raster_rows},
                {"raster_cols", m.raster_cols},
                {"channels", m.channels},
                {"patch", m.patch},
                {"image_hidden", m.image_hidden},
                {"d_backbone_img", m.d_backbone_img},
                {"vocab_size", m.vocab_size},
                {"max_tokens", m.max_tokens},
                {"d_backbone_txt", m.d_backbone_txt},
                {"text_layers", m.text_layers},
                {"text_heads", m.text_heads},
                {"text_ffn", m.text_ffn},
                {"d_model", m.d_model},
                {"up_layers", m.up_layers},
                {"up_heads", m.up_heads},
                {"up_ffn", m.up_ffn},
                {"cross_fusion_heads", m.cross_fusion_heads},
                {"plus_heads", m.plus_heads},
                {"plus_ffn", m.plus_ffn},
                {"token_init_std", m.token_init_std},
                {"encoder_layers", m.encoder_layers},
                {"decoder_layers", m.decoder_layers},
                {"head_heads", m.head_heads},
                {"head_ffn", m.head_ffn},
                {"num_queries", m.num_queries},
                {"d_contrastive", m.d_contrastive},
                {"train_shared_projections", m.train_shared_projections},
                {"aux_loss", m.aux_loss}};
}

void read_model(const json& j, ModelConfig& m) {
    detail::StrictObject o(j, "model");
    std::string variant = to_string(m.variant), fusion = to_string(m.fusion),
                position_mode = to_string(m.position_mode);
    o.read("variant", variant);
    o.read("fusion", fusion);
    o.read("position_mode", position_mode);
    m.variant = parse_variant(variant);
    m.fusion = parse_fusion(fusion);
    m.position_mode = parse_position_mode(position_mode);
    o.read("raster_rows", m.raster_rows);
    o.read("raster_cols", m.raster_cols);
    o.read("channels", m.channels);
    o.read("patch", m.patch);
    o.read("image_hidden", m.image_hidden);
    o.read("d_backbone_img", m.d_backbone_img);
    o.read("vocab_size", m.vocab_size);
    o.read("max_tokens", m.max_tokens);
    o.read("d_backbone_txt", m.d_backbone_txt);
    o.read("text_layers", m.text_layers);
    o.read("text_heads", m.text_heads);
    o.read("text_ffn", m.text_ffn);
    o.read("d_model", m.d_model);
    o.read("up_layers", m.up_layers);
    o.read("up_heads", m.up_heads);
    o.read("up_ffn", m.up_ffn);
    o.read("cross_fusion_heads", m.cross_fusion_heads);
    o.read("plus_heads", m.plus_heads);
    o.read("plus_ffn", m.plus_ffn);
    o.read("token_init_std", m.token_init_std);
    o.read("encoder_layers", m.encoder_layers);
    o.read("decoder_layers", m.decoder_layers);
    o.read("head_heads", m.head_heads);
    o.read("head_ffn", m.head_ffn);
    o.read("num_queries", m.num_queries);
    o.read("d_contrastive", m.d_contrastive);
    o.read("train_shared_projections", m.train_shared_projections);
    o.read("aux_loss", m.aux_loss);
    o.finish();
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

void require_divisible(std::size_t width, std::size_t heads, const char* what) {
    require(heads > 0 && width % heads == 0, std::string(what) + ": width " + std::to_string(width) +
                                                 " is not divisible by " + std::to_string(heads) + " heads");
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
    j = json{{"seed", c.seed},
             {"model", model_json(c.model)},
             {"loss",
              {{"l1", c.loss.l1},
               {"giou", c.loss.giou},
               {"soft_token", c.loss.soft_token},
               {"contrastive", c.loss.contrastive},
               {"temperature", c.loss.temperature}}},
             {"optim",
              {{"lr", c.optim.lr},
               {"beta1", c.optim.beta1},
               {"beta2", c.optim.beta2},
               {"eps", c.optim.eps},
               {"clip_norm", c.optim.clip_norm}}},
             {"train",
              {{"steps", c.train.steps},
               {"batch_size", c.train.batch_size},
               {"epochs", c.train.epochs},
               {"log_every", c.train.log_every},
               {"warmup_steps", c.train.warmup_steps},
               {"lr_drop_step", c.train.lr_drop_step},
               {"lr_drop_factor", c.train.lr_drop_factor}}},
             {"data", c.data},
             {"eval",
              {{"iou_threshold", c.eval.iou_threshold},
               {"confidence_threshold", c.eval.confidence_threshold},
               {"ks", c.eval.ks}}}};
}

RunConfig parse_config(const json& j) {
    RunConfig c = desk_config();
    detail::StrictObject top(j, "config");
    top.read("seed", c.seed);
    if (const auto* m = top.child("model")) read_model(*m, c.model);
    if (const auto* l = top.child("loss")) {
        detail::StrictObject o(*l, "loss");
        o.read("l1", c.loss.l1);
        o.read("giou", c.loss.giou);
        o.read("soft_token", c.loss.soft_token);
        o.read("contrastive", c.loss.contrastive);
        o.read("temperature", c.loss.temperature);
        o.finish();
    }
    if (const auto* opt = top.child("optim")) {
        detail::StrictObject o(*opt, "optim");
        o.read("lr", c.optim.lr);
        o.read("beta1", c.optim.beta1);
        o.read("beta2", c.optim.beta2);
        o.read("eps", c.optim.eps);
        o.read("clip_norm", c.optim.clip_norm);
        o.finish();
    }
    if (const auto* t = top.child("train")) {
        detail::StrictObject o(*t, "train");
        o.read("steps", c.train.steps);
        o.read("batch_size", c.train.batch_size);
        o.read("epochs", c.train.epochs);
        o.read("log_every", c.train.log_every);
        o.read("warmup_steps", c.train.warmup_steps);
        o.read("lr_drop_step", c.train.lr_drop_step);
        o.read("lr_drop_factor", c.train.lr_drop_factor);
        o.finish();
    }
    if (const auto* d = top.child("data")) {
        try {
            c.data = d->get<SplitSpec>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    }
    if (const auto* e = top.child("eval")) {
        detail::StrictObject o(*e, "eval");
        o.read("iou_threshold", c.eval.iou_threshold);
        o.read("confidence_threshold", c.eval.confidence_threshold);
        o.read("ks", c.eval.ks);
        o.finish();
    }
    top.finish();
    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path.string());
    out << json(c).dump(2) << '\n';
}

void validate(const RunConfig& c) {
    const auto& m = c.model;
    require(m.patch > 0 && m.raster_rows % m.patch == 0 && m.raster_cols % m.patch == 0,
            "model: raster extents must be multiples of patch");
    require(m.channels > 0 && m.image_hidden > 0 && m.d_backbone_img > 0 && m.d_backbone_txt > 0,
            "model: widths must be positive");
    require(m.d_model > 0 && m.d_model % 4 == 0, "model: d_model must be a positive multiple of 4");
    require(m.max_tokens > 0, "model: max_tokens must be positive");
    require(m.num_queries > 0, "model: num_queries must be positive");
    require(m.d_contrastive > 0, "model: d_contrastive must be positive");
    require(m.up_layers > 0, "model: up_layers must be positive");
    require(m.token_init_std >= 0.0, "model: token_init_std must be non-negative");
    require_divisible(m.d_backbone_txt, m.text_heads, "model.text_heads");
    require_divisible(m.d_model, m.up_heads, "model.up_heads");
    require_divisible(m.d_model, m.plus_heads, "model.plus_heads");
    require_divisible(m.d_model, m.head_heads, "model.head_heads");
    require_divisible(m.d_model, m.cross_fusion_heads, "model.cross_fusion_heads");
    require(m.up_ffn > 0 && m.plus_ffn > 0 && m.head_ffn > 0 && m.text_ffn > 0, "model: ffn widths must be positive");
    require(!m.aux_loss, "model.aux_loss: auxiliary decoder losses are not implemented");

    require(c.loss.temperature > 0.0, "loss.temperature must be positive");
    require(c.loss.l1 >= 0.0 && c.loss.giou >= 0.0 && c.loss.soft_token >= 0.0 && c.loss.contrastive >= 0.0,
            "loss: weights must be non-negative");
    require(c.optim.lr > 0.0 && c.optim.eps > 0.0, "optim: lr and eps must be positive");
    require(c.optim.beta1 >= 0.0 && c.optim.beta1 < 1.0 && c.optim.beta2 >= 0.0 && c.optim.beta2 < 1.0,
            "optim: betas must lie in [0, 1)");
    require(c.optim.clip_norm >= 0.0, "optim.clip_norm must be non-negative");
    require(c.train.batch_size > 0, "train.batch_size must be positive");
    require(c.train.lr_drop_factor > 0.0, "train.lr_drop_factor must be positive");
    require(c.eval.iou_threshold > 0.0 && c.eval.iou_threshold <= 1.0, "eval.iou_threshold must lie in (0, 1]");
    require(c.eval.confidence_threshold >= 0.0 && c.eval.confidence_threshold < 1.0,
            "eval.confidence_threshold must lie in [0, 1)");
    require(!c.eval.ks.empty(), "eval.ks must not be empty");
    for (auto k : c.eval.ks) require(k > 0, "eval.ks entries must be positive");

    validate(c.data);
    require(c.data.max_objects <= m.num_queries, "data.max_objects exceeds model.num_queries");
    require(c.data.rows == m.raster_rows && c.data.cols == m.raster_cols,
            "data raster extents must match model.raster_rows/raster_cols");
    require(m.channels == 3, "model.channels must be 3 for synthetic RGB scenes");
    // Longest caption: every object plus one distractor phrase, 3 tokens each,
    // joined by connectors of at most 2 tokens.
    const std::size_t phrases = c.data.max_objects + (c.data.distractor_rate > 0.0 ? 1 : 0);
    const std::size_t longest = 3 * phrases + 2 * (phrases - 1);
    require(longest <= m.max_tokens, "model.max_tokens (" + std::to_string(m.max_tokens) +
                                         ") is shorter than the longest caption (" + std::to_string(longest) + ")");
    const std::size_t vocab = make_vocabulary(c.data).size();
    require(m.vocab_size == 0 || m.vocab_size >= vocab,
            "model.vocab_size is smaller than the data vocabulary (" + std::to_string(vocab) + ")");
}

RunConfig resolved(RunConfig c) {
    if (c.model.vocab_size == 0) c.model.vocab_size = make_vocabulary(c.data).size();
    return c;
}

RunConfig desk_config() {
    RunConfig c;
    c.optim.lr = 1e-3;
    c.train.warmup_steps = 100;
    c.train.lr_drop_step = 1700;
    // Within 2000 steps decoder depth, not head-encoder depth, limits Recall@1.
    c.model.encoder_layers = 0;
    c.model.decoder_layers = 4;
    return c;
}

RunConfig tiny_config() {
    RunConfig c;
    auto& m = c.model;
    m.variant = Variant::plus;
    m.raster_rows = m.raster_cols = 8;
    m.patch = 2;
    m.image_hidden = 8;
    m.d_backbone_img = 8;
    m.d_backbone_txt = 12;
    m.text_heads = 2;
    m.text_ffn = 16;
    m.max_tokens = 16;
    m.d_model = 16;
    m.up_layers = 4;
    m.up_heads = 4;
    m.up_ffn = 32;
    m.plus_heads = 2;
    m.plus_ffn = 32;
    m.encoder_layers = 1;
    m.decoder_layers = 1;
    m.head_heads = 2;
    m.head_ffn = 32;
    m.num_queries = 4;
    m.d_contrastive = 8;
    m.token_init_std = 0.5;
    c.data.rows = c.data.cols = 8;
    c.data.min_size = 2;
    c.data.max_size = 3;
    c.data.max_objects = 2;
    c.data.n_train = 8;
    c.data.n_val = 4;
    return c;
}

RunConfig paper_scale_config() {
    RunConfig c;
    auto& m = c.model;
    // 32x32 patches of a 512x512 image stand in for the stride-32 ResNet grid.
    m.raster_rows = m.raster_cols = 512;
    m.patch = 32;
    m.image_hidden = 2048;
    m.d_backbone_img = 2048;
    m.vocab_size = 50265;
    m.max_tokens = 256;
    m.d_backbone_txt = 768;
    m.text_layers = 12;
    m.text_heads = 12;
    m.text_ffn = 3072;
    m.d_model = 256;
    m.up_layers = 4;
    m.up_heads = 4;
    m.up_ffn = 1024;
    m.plus_heads = 8;
    m.plus_ffn = 1024;
    m.encoder_layers = 6;
    m.decoder_layers = 6;
    m.head_heads = 8;
    m.head_ffn = 2048;
    m.num_queries = 100;
    m.d_contrastive = 64;
    c.data.rows = c.data.cols = 512;
    c.data.max_size = 64;
    c.train.batch_size = 64;
    c.train.epochs = 40;
    return c;
}

}  // namespace lmdetr
