// SPDX-License-Identifier: Apache-2.0
//
// Deterministic desk-scale modulated-detection scenes: colored shapes on a
// small raster, a caption naming them, boxes, and per-object token spans.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmdetr/boxes.hpp"
#include "lmdetr/vocab.hpp"

namespace lmdetr {

struct Raster {
    std::size_t rows = 0, cols = 0, channels = 0;
    std::vector<std::uint8_t> values;  // row-major, channel fastest

    std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const {
        return values[(r * cols + c) * channels + ch];
    }
    std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return values[(r * cols + c) * channels + ch]; }
    bool operator==(const Raster&) const = default;
};

// Half-open token range [begin, end).
struct TokenSpan {
    std::size_t begin = 0, end = 0;

    bool empty() const { return end <= begin; }
    std::size_t size() const { return empty() ? 0 : end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const TokenSpan&) const = default;
};

struct SceneObject {
    Box box;
    TokenSpan span;  // the color and shape words of its phrase
    std::string color, shape;
    bool operator==(const SceneObject&) const = default;
};

// One "a <color> <shape>" mention. Mentions of absent objects have no object
// index and ground to nothing.
struct Phrase {
    std::string color, shape;
    TokenSpan span;
    std::optional<std::size_t> object;
    bool operator==(const Phrase&) const = default;
};

struct Scene {
    std::uint64_t id = 0;
    Raster raster;
    std::vector<std::size_t> tokens;
    std::vector<SceneObject> objects;
    std::vector<Phrase> phrases;
    bool operator==(const Scene&) const = default;
};

struct SplitSpec {
    std::uint64_t seed = 7;
    std::size_t n_train = 256;
    std::size_t n_val = 64;
    std::size_t rows = 16, cols = 16;
    std::size_t min_objects = 1, max_objects = 3;
    std::size_t min_size = 4, max_size = 7;  // shape extent in pixels
    std::vector<std::string> colors{"red", "green", "blue", "yellow"};
    std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
    double relation_rate = 0.5;    // chance of "left of"/"above"/... instead of "and"
    double distractor_rate = 0.0;  // chance a scene also mentions one absent object

    std::size_t size() const { return n_train + n_val; }
};

// Strict: unknown keys raise ConfigError.
void to_json(nlohmann::json& j, const SplitSpec& spec);
void from_json(const nlohmann::json& j, SplitSpec& spec);
// Throws ConfigError on an impossible spec.
void validate(const SplitSpec& spec);

enum class Split { train, val };

// Fixed grammar words followed by colors then shapes.
Vocabulary make_vocabulary(const SplitSpec& spec);

// Pure function of (spec, index); index < spec.size(). Scenes [0, n_train)
// form the training split, the rest validation.
Scene generate(const SplitSpec& spec, std::size_t index);
std::vector<Scene> generate_split(const SplitSpec& spec, Split split);

std::uint8_t channel_value(const std::string& color, std::size_t channel);

struct DistractorOptions {
    std::size_t absent_phrases = 1;
    bool keep_present = true;  // false yields a caption with no grounded objects
};

// Re-captions `scene` with extra mentions of (color, shape) pairs that are not
// in the image. Returns the scene unchanged when no unused pair exists.
Scene distractor_caption(const Scene& scene, const SplitSpec& spec, std::mt19937_64& rng,
                         DistractorOptions options = {});

// Line-delimited JSON: a header record then one record per scene.
inline constexpr int kDatasetFormatVersion = 1;
void write_dataset(const std::filesystem::path& path, const SplitSpec& spec, const std::vector<Scene>& scenes);

struct Dataset {
    SplitSpec spec;
    Vocabulary vocabulary;
    std::vector<Scene> scenes;
};
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace lmdetr
