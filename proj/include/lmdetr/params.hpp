// SPDX-License-Identifier: Apache-2.0
//
// Named parameter collection. The trainable flag on each entry is the
// freezing contract: frozen tensors never carry requires_grad and the
// optimizer skips them.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmdetr/tensor.hpp"

namespace lmdetr {

// Accounting bucket used by parameter reports.
enum class ParamGroup {
    frozen_backbone,     // stand-in image/text encoders when frozen
    trainable_backbone,  // UP, modality tokens, cross-fusion, or the encoders themselves in full training
    head,                // shared-space projections, detection transformer, queries, output heads
};

const char* to_string(ParamGroup group);

struct Init {
    enum class Kind { zeros, ones, constant, normal, xavier_uniform, he_normal };
    Kind kind = Kind::zeros;
    double value = 0.0;  // constant value or normal std

    static Init zeros() { return {Kind::zeros, 0.0}; }
    static Init ones() { return {Kind::ones, 0.0}; }
    static Init constant(double v) { return {Kind::constant, v}; }
    static Init normal(double stddev) { return {Kind::normal, stddev}; }
    // Fan-in/fan-out taken from a [fan_in x fan_out] weight shape.
    static Init xavier_uniform() { return {Kind::xavier_uniform, 0.0}; }
    static Init he_normal() { return {Kind::he_normal, 0.0}; }
};

struct ParamEntry {
    std::string name;
    Shape shape;
    bool trainable = true;
    ParamGroup group = ParamGroup::head;
    Tensor tensor;  // undefined in shape-only registries

    std::size_t count() const { return shape_numel(shape); }
};

class ParamRegistry {
public:
    enum class Mode { allocate, shape_only };

    explicit ParamRegistry(std::uint64_t seed = 0, Mode mode = Mode::allocate);

    // Registers a tensor. Initial values depend only on (seed, name), so the
    // same name gets the same values in every model that declares it.
    Tensor add(const std::string& name, Shape shape, bool trainable, ParamGroup group, Init init);

    bool contains(const std::string& name) const;
    const ParamEntry& entry(const std::string& name) const;
    Tensor get(const std::string& name) const;

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    Mode mode() const { return mode_; }
    std::uint64_t seed() const { return seed_; }

    std::size_t total_count() const;
    std::size_t trainable_count() const;

    void zero_grad();

private:
    std::uint64_t seed_;
    Mode mode_;
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Stable 64-bit FNV-1a, used to derive per-name RNG streams.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

}  // namespace lmdetr
