// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/params.hpp"

#include <cmath>
#include <random>

#include "lmdetr/errors.hpp"

namespace lmdetr {

const char* to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::frozen_backbone:
            return "frozen_backbone";
        case ParamGroup::trainable_backbone:
            return "trainable_backbone";
        case ParamGroup::head:
            return "head";
    }
    return "?";
}

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

ParamRegistry::ParamRegistry(std::uint64_t seed, Mode mode) : seed_(seed), mode_(mode) {}

namespace {

std::vector<double> initial_values(const Shape& shape, const Init& init, std::uint64_t stream) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> values(n, 0.0);
    std::mt19937_64 rng(stream);
    const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : static_cast<double>(n);
    const double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1]) : static_cast<double>(n);
    switch (init.kind) {
        case Init::Kind::zeros:
            break;
        case Init::Kind::ones:
            std::fill(values.begin(), values.end(), 1.0);
            break;
        case Init::Kind::constant:
            std::fill(values.begin(), values.end(), init.value);
            break;
        case Init::Kind::normal: {
            std::normal_distribution<double> dist(0.0, init.value);
            for (auto& v : values) v = dist(rng);
            break;
        }
        case Init::Kind::xavier_uniform: {
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : values) v = dist(rng);
            break;
        }
        case Init::Kind::he_normal: {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            for (auto& v : values) v = dist(rng);
            break;
        }
    }
    return values;
}

}  // namespace

Tensor ParamRegistry::add(const std::string& name, Shape shape, bool trainable, ParamGroup group, Init init) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.shape = shape;
    e.trainable = trainable;
    e.group = group;
    if (mode_ == Mode::allocate) {
        e.tensor = Tensor(shape, initial_values(shape, init, stable_hash(name, seed_)), trainable);
    }
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back().tensor;
}

bool ParamRegistry::contains(const std::string& name) const { return index_.contains(name); }

const ParamEntry& ParamRegistry::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
    return entries_[it->second];
}

Tensor ParamRegistry::get(const std::string& name) const { return entry(name).tensor; }

std::size_t ParamRegistry::total_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.count();
    return n;
}

std::size_t ParamRegistry::trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable) n += e.count();
    }
    return n;
}

void ParamRegistry::zero_grad() {
    for (auto& e : entries_) {
        if (e.tensor.defined() && e.tensor.has_grad()) {
            auto g = e.tensor.grad_buffer();
            std::fill(g.begin(), g.end(), 0.0);
        }
    }
}

}  // namespace lmdetr
