// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "lmdetr/errors.hpp"
#include "lmdetr/params.hpp"

namespace lmdetr {

using nlohmann::json;

void to_json(json& j, const SplitSpec& s) {
    j = json{{"seed", s.seed},
             {"n_train", s.n_train},
             {"n_val", s.n_val},
             {"rows", s.rows},
             {"cols", s.cols},
             {"min_objects", s.min_objects},
             {"max_objects", s.max_objects},
             {"min_size", s.min_size},
             {"max_size", s.max_size},
             {"colors", s.colors},
             {"shapes", s.shapes},
             {"relation_rate", s.relation_rate},
             {"distractor_rate", s.distractor_rate}};
}

void from_json(const json& j, SplitSpec& s) {
    detail::StrictObject o(j, "data");
    o.read("seed", s.seed);
    o.read("n_train", s.n_train);
    o.read("n_val", s.n_val);
    o.read("rows", s.rows);
    o.read("cols", s.cols);
    o.read("min_objects", s.min_objects);
    o.read("max_objects", s.max_objects);
    o.read("min_size", s.min_size);
    o.read("max_size", s.max_size);
    o.read("colors", s.colors);
    o.read("shapes", s.shapes);
    o.read("relation_rate", s.relation_rate);
    o.read("distractor_rate", s.distractor_rate);
    o.finish();
}

namespace {

const std::vector<std::string> kGrammarWords{"a", "and", "left", "right", "of", "above", "below"};

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb color_rgb(const std::string& color) {
    if (color == "red") return {255, 0, 0};
    if (color == "green") return {0, 255, 0};
    if (color == "blue") return {0, 0, 255};
    if (color == "yellow") return {255, 255, 0};
    if (color == "cyan") return {0, 255, 255};
    if (color == "magenta") return {255, 0, 255};
    if (color == "white") return {255, 255, 255};
    if (color == "gray") return {128, 128, 128};
    throw ConfigError("no palette entry for color '" + color + "'");
}

// s x s occupancy mask for a shape, row-major.
std::vector<bool> shape_mask(const std::string& shape, std::size_t s) {
    std::vector<bool> mask(s * s, false);
    const double c = 0.5 * static_cast<double>(s - 1);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double dx = static_cast<double>(x) - c;
            const double dy = static_cast<double>(y) - c;
            bool on = false;
            if (shape == "square") {
                on = true;
            } else if (shape == "circle") {
                const double r = 0.5 * static_cast<double>(s);
                on = dx * dx + dy * dy <= r * r;
            } else if (shape == "triangle") {
                // Apex row on top, full base on the bottom row.
                const double half = 0.5 * static_cast<double>(s) * (static_cast<double>(y) + 1.0) / static_cast<double>(s);
                on = std::abs(dx) <= half;
            } else if (shape == "cross") {
                const double arm = std::max(0.5, static_cast<double>(s) / 6.0);
                on = std::abs(dx) <= arm || std::abs(dy) <= arm;
            } else {
                throw ConfigError("unknown shape '" + shape + "'");
            }
            mask[y * s + x] = on;
        }
    }
    return mask;
}

struct PixelRect {
    std::size_t x0, y0, x1, y1;  // inclusive
};

bool separated(const PixelRect& a, const PixelRect& b) {
    // One free pixel between rectangles.
    return a.x1 + 1 < b.x0 || b.x1 + 1 < a.x0 || a.y1 + 1 < b.y0 || b.y1 + 1 < a.y0;
}

struct Placed {
    std::string color, shape;
    std::size_t x, y, size;  // mask anchor
    std::vector<bool> mask;
    PixelRect rect;          // painted bounds
};

std::vector<std::string> relation_words(const PixelRect& prev, const PixelRect& cur, std::mt19937_64& rng) {
    std::vector<std::vector<std::string>> valid;
    if (prev.x1 < cur.x0) valid.push_back({"left", "of"});
    if (prev.x0 > cur.x1) valid.push_back({"right", "of"});
    if (prev.y1 < cur.y0) valid.push_back({"above"});
    if (prev.y0 > cur.y1) valid.push_back({"below"});
    if (valid.empty()) return {"and"};
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    return valid[pick(rng)];
}

// Lays the phrases out as "a <color> <shape> <connector> a <color> <shape> ..."
// and records the color+shape span of every phrase and its object.
void assemble_caption(Scene& scene, const std::vector<std::vector<std::string>>& connectors,
                      const Vocabulary& vocab) {
    scene.tokens.clear();
    for (std::size_t p = 0; p < scene.phrases.size(); ++p) {
        if (p > 0) {
            for (const auto& w : connectors[p - 1]) scene.tokens.push_back(vocab.id(w));
        }
        auto& phrase = scene.phrases[p];
        scene.tokens.push_back(vocab.id("a"));
        phrase.span.begin = scene.tokens.size();
        scene.tokens.push_back(vocab.id(phrase.color));
        scene.tokens.push_back(vocab.id(phrase.shape));
        phrase.span.end = scene.tokens.size();
        if (phrase.object) scene.objects[*phrase.object].span = phrase.span;
    }
}

std::uint64_t scene_stream(std::uint64_t seed, std::size_t index) {
    // splitmix64 over (seed, index).
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

void validate(const SplitSpec& spec) {
    if (spec.colors.empty() || spec.shapes.empty()) throw ConfigError("data: empty color or shape list");
    if (spec.min_objects < 1 || spec.min_objects > spec.max_objects) {
        throw ConfigError("data: need 1 <= min_objects <= max_objects");
    }
    if (spec.colors.size() * spec.shapes.size() < spec.max_objects) {
        throw ConfigError("data: " + std::to_string(spec.colors.size() * spec.shapes.size()) +
                          " color/shape pairs cannot name " + std::to_string(spec.max_objects) + " distinct objects");
    }
    if (spec.min_size < 2 || spec.min_size > spec.max_size || spec.max_size > std::min(spec.rows, spec.cols)) {
        throw ConfigError("data: object sizes must satisfy 2 <= min_size <= max_size <= raster side");
    }
    if (spec.relation_rate < 0.0 || spec.relation_rate > 1.0 || spec.distractor_rate < 0.0 ||
        spec.distractor_rate > 1.0) {
        throw ConfigError("data: rates must lie in [0, 1]");
    }
    for (const auto& c : spec.colors) (void)color_rgb(c);
    for (const auto& s : spec.shapes) (void)shape_mask(s, 2);
    std::vector<std::string> words = kGrammarWords;
    words.insert(words.end(), spec.colors.begin(), spec.colors.end());
    words.insert(words.end(), spec.shapes.begin(), spec.shapes.end());
    std::sort(words.begin(), words.end());
    if (std::adjacent_find(words.begin(), words.end()) != words.end()) {
        throw ConfigError("data: colors, shapes and grammar words must be distinct");
    }
}

Vocabulary make_vocabulary(const SplitSpec& spec) {
    std::vector<std::string> words = kGrammarWords;
    words.insert(words.end(), spec.colors.begin(), spec.colors.end());
    words.insert(words.end(), spec.shapes.begin(), spec.shapes.end());
    return Vocabulary(std::move(words));
}

std::uint8_t channel_value(const std::string& color, std::size_t channel) {
    const auto rgb = color_rgb(color);
    switch (channel) {
        case 0:
            return rgb.r;
        case 1:
            return rgb.g;
        default:
            return rgb.b;
    }
}

Scene generate(const SplitSpec& spec, std::size_t index) {
    validate(spec);
    if (index >= spec.size()) {
        throw ContractError("scene index " + std::to_string(index) + " outside split of " + std::to_string(spec.size()));
    }
    const Vocabulary vocab = make_vocabulary(spec);
    std::mt19937_64 rng(scene_stream(spec.seed, index));

    std::uniform_int_distribution<std::size_t> count_dist(spec.min_objects, spec.max_objects);
    const std::size_t k = count_dist(rng);

    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& c : spec.colors) {
        for (const auto& s : spec.shapes) pairs.emplace_back(c, s);
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);

    std::vector<Placed> placed;
    std::uniform_int_distribution<std::size_t> size_dist(spec.min_size, spec.max_size);
    for (int attempt = 0; placed.size() < k; ++attempt) {
        if (attempt > 10000) throw ConfigError("data: cannot place objects without overlap; raster too small");
        Placed p;
        p.color = pairs[placed.size()].first;
        p.shape = pairs[placed.size()].second;
        p.size = size_dist(rng);
        std::uniform_int_distribution<std::size_t> x_dist(0, spec.cols - p.size);
        std::uniform_int_distribution<std::size_t> y_dist(0, spec.rows - p.size);
        p.x = x_dist(rng);
        p.y = y_dist(rng);
        p.mask = shape_mask(p.shape, p.size);
        p.rect = {spec.cols, spec.rows, 0, 0};
        for (std::size_t dy = 0; dy < p.size; ++dy) {
            for (std::size_t dx = 0; dx < p.size; ++dx) {
                if (!p.mask[dy * p.size + dx]) continue;
                p.rect.x0 = std::min(p.rect.x0, p.x + dx);
                p.rect.y0 = std::min(p.rect.y0, p.y + dy);
                p.rect.x1 = std::max(p.rect.x1, p.x + dx);
                p.rect.y1 = std::max(p.rect.y1, p.y + dy);
            }
        }
        const bool clear = std::all_of(placed.begin(), placed.end(),
                                       [&](const Placed& other) { return separated(other.rect, p.rect); });
        if (clear) placed.push_back(std::move(p));
    }

    Scene scene;
    scene.id = index;
    scene.raster.rows = spec.rows;
    scene.raster.cols = spec.cols;
    scene.raster.channels = 3;
    scene.raster.values.assign(spec.rows * spec.cols * 3, 0);
    const double cols = static_cast<double>(spec.cols), rows = static_cast<double>(spec.rows);
    for (std::size_t i = 0; i < placed.size(); ++i) {
        const auto& p = placed[i];
        for (std::size_t dy = 0; dy < p.size; ++dy) {
            for (std::size_t dx = 0; dx < p.size; ++dx) {
                if (!p.mask[dy * p.size + dx]) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) scene.raster.at(p.y + dy, p.x + dx, ch) = channel_value(p.color, ch);
            }
        }
        SceneObject obj;
        obj.color = p.color;
        obj.shape = p.shape;
        obj.box = from_corners({static_cast<double>(p.rect.x0) / cols, static_cast<double>(p.rect.y0) / rows,
                                static_cast<double>(p.rect.x1 + 1) / cols, static_cast<double>(p.rect.y1 + 1) / rows});
        scene.objects.push_back(obj);
        scene.phrases.push_back(Phrase{p.color, p.shape, {}, i});
    }

    std::vector<std::vector<std::string>> connectors;
    std::bernoulli_distribution use_relation(spec.relation_rate);
    for (std::size_t i = 1; i < placed.size(); ++i) {
        connectors.push_back(use_relation(rng) ? relation_words(placed[i - 1].rect, placed[i].rect, rng)
                                               : std::vector<std::string>{"and"});
    }
    assemble_caption(scene, connectors, vocab);

    std::bernoulli_distribution add_distractor(spec.distractor_rate);
    if (spec.distractor_rate > 0.0 && add_distractor(rng)) scene = distractor_caption(scene, spec, rng);
    return scene;
}

std::vector<Scene> generate_split(const SplitSpec& spec, Split split) {
    const std::size_t begin = split == Split::train ? 0 : spec.n_train;
    const std::size_t end = split == Split::train ? spec.n_train : spec.size();
    std::vector<Scene> scenes;
    scenes.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) scenes.push_back(generate(spec, i));
    return scenes;
}

Scene distractor_caption(const Scene& scene, const SplitSpec& spec, std::mt19937_64& rng,
                         DistractorOptions options) {
    const Vocabulary vocab = make_vocabulary(spec);
    std::vector<std::pair<std::string, std::string>> unused;
    for (const auto& c : spec.colors) {
        for (const auto& s : spec.shapes) {
            const bool present = std::any_of(scene.objects.begin(), scene.objects.end(),
                                             [&](const SceneObject& o) { return o.color == c && o.shape == s; });
            const bool mentioned = std::any_of(scene.phrases.begin(), scene.phrases.end(),
                                               [&](const Phrase& p) { return p.color == c && p.shape == s; });
            if (!present && !mentioned) unused.emplace_back(c, s);
        }
    }
    if (unused.empty() || options.absent_phrases == 0) return scene;
    std::shuffle(unused.begin(), unused.end(), rng);
    unused.resize(std::min(unused.size(), options.absent_phrases));

    Scene out = scene;
    out.phrases.clear();
    if (options.keep_present) {
        out.phrases = scene.phrases;
    } else {
        out.objects.clear();
    }
    for (const auto& [color, shape] : unused) {
        std::uniform_int_distribution<std::size_t> slot(0, out.phrases.size());
        out.phrases.insert(out.phrases.begin() + static_cast<std::ptrdiff_t>(slot(rng)), Phrase{color, shape, {}, {}});
    }
    const std::vector<std::vector<std::string>> connectors(out.phrases.size() > 0 ? out.phrases.size() - 1 : 0,
                                                           std::vector<std::string>{"and"});
    assemble_caption(out, connectors, vocab);
    return out;
}

namespace {

json scene_to_json(const Scene& s) {
    json objects = json::array();
    for (const auto& o : s.objects) {
        objects.push_back({{"box", o.box.as_array()},
                           {"span", {o.span.begin, o.span.end}},
                           {"color", o.color},
                           {"shape", o.shape}});
    }
    json phrases = json::array();
    for (const auto& p : s.phrases) {
        phrases.push_back({{"color", p.color},
                           {"shape", p.shape},
                           {"span", {p.span.begin, p.span.end}},
                           {"object", p.object ? json(*p.object) : json(nullptr)}});
    }
    std::vector<int> raster(s.raster.values.begin(), s.raster.values.end());
    return json{{"scene_id", s.id},
                {"raster",
                 {{"rows", s.raster.rows}, {"cols", s.raster.cols}, {"channels", s.raster.channels}, {"values", raster}}},
                {"tokens", s.tokens},
                {"objects", objects},
                {"phrases", phrases}};
}

TokenSpan span_from_json(const json& j) { return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()}; }

Scene scene_from_json(const json& j) {
    Scene s;
    s.id = j.at("scene_id").get<std::uint64_t>();
    const auto& r = j.at("raster");
    s.raster.rows = r.at("rows").get<std::size_t>();
    s.raster.cols = r.at("cols").get<std::size_t>();
    s.raster.channels = r.at("channels").get<std::size_t>();
    for (int v : r.at("values").get<std::vector<int>>()) {
        if (v < 0 || v > 255) throw LoadError("raster value out of range");
        s.raster.values.push_back(static_cast<std::uint8_t>(v));
    }
    if (s.raster.values.size() != s.raster.rows * s.raster.cols * s.raster.channels) {
        throw LoadError("raster size does not match its extents");
    }
    s.tokens = j.at("tokens").get<std::vector<std::size_t>>();
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        const auto b = o.at("box").get<std::array<double, 4>>();
        obj.box = {b[0], b[1], b[2], b[3]};
        obj.span = span_from_json(o.at("span"));
        obj.color = o.at("color").get<std::string>();
        obj.shape = o.at("shape").get<std::string>();
        s.objects.push_back(obj);
    }
    for (const auto& p : j.at("phrases")) {
        Phrase ph;
        ph.color = p.at("color").get<std::string>();
        ph.shape = p.at("shape").get<std::string>();
        ph.span = span_from_json(p.at("span"));
        if (!p.at("object").is_null()) ph.object = p.at("object").get<std::size_t>();
        s.phrases.push_back(ph);
    }
    return s;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const SplitSpec& spec, const std::vector<Scene>& scenes) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset " + path.string());
    json header{{"format", "lmdetr-scenes"},
                {"version", kDatasetFormatVersion},
                {"spec", spec},
                {"vocabulary", make_vocabulary(spec).tokens()},
                {"count", scenes.size()}};
    out << header.dump() << '\n';
    for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw LoadError(path.string() + ": empty dataset file");
    Dataset ds;
    try {
        const json header = json::parse(line);
        if (header.at("format") != "lmdetr-scenes") throw LoadError(path.string() + ": not a scene dataset");
        if (header.at("version").get<int>() != kDatasetFormatVersion) {
            throw LoadError(path.string() + ": unsupported dataset version " + header.at("version").dump());
        }
        ds.spec = header.at("spec").get<SplitSpec>();
        ds.vocabulary = Vocabulary(header.at("vocabulary").get<std::vector<std::string>>());
        const auto count = header.at("count").get<std::size_t>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ds.scenes.push_back(scene_from_json(json::parse(line)));
        }
        if (ds.scenes.size() != count) {
            throw LoadError(path.string() + ": header promises " + std::to_string(count) + " scenes, found " +
                            std::to_string(ds.scenes.size()));
        }
    } catch (const json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace lmdetr
