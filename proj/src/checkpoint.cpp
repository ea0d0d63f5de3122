// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "lmdetr/errors.hpp"

namespace lmdetr {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'M', 'D', 'T', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw LoadError(path.string() + ": truncated archive");
    return value;
}

std::string describe(const Shape& s) { return shape_str(s); }

}  // namespace

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        if (shape_numel(e.shape) != e.values.size()) {
            throw ContractError("archive entry " + e.name + ": shape and value count disagree");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put<std::uint8_t>(out, e.trainable ? 1 : 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(e.values.data()),
                  static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw LoadError(path.string() + ": not a checkpoint archive");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw LoadError(path.string() + ": unsupported archive version " + std::to_string(version));
    }
    const auto count = get<std::uint64_t>(in, path);
    std::vector<ArchiveEntry> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
        ArchiveEntry e;
        const auto name_len = get<std::uint32_t>(in, path);
        if (name_len > 4096) throw LoadError(path.string() + ": corrupt entry name length");
        e.name.resize(name_len);
        if (!in.read(e.name.data(), name_len)) throw LoadError(path.string() + ": truncated archive");
        e.trainable = get<std::uint8_t>(in, path) != 0;
        const auto rank = get<std::uint32_t>(in, path);
        if (rank > 8) throw LoadError(path.string() + ": corrupt rank for " + e.name);
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(in, path));
        e.values.resize(shape_numel(e.shape));
        if (!in.read(reinterpret_cast<char*>(e.values.data()),
                     static_cast<std::streamsize>(e.values.size() * sizeof(double)))) {
            throw LoadError(path.string() + ": truncated values for " + e.name);
        }
        entries.push_back(std::move(e));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw LoadError(path.string() + ": trailing bytes");
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& reg) {
    std::vector<ArchiveEntry> entries;
    for (const auto& e : reg.entries()) {
        if (!e.tensor.defined()) throw ContractError("save_checkpoint: shape-only registry");
        entries.push_back({e.name, e.trainable, e.shape, {e.tensor.data().begin(), e.tensor.data().end()}});
    }
    write_archive(path, entries);
}

void load_checkpoint(const std::filesystem::path& path, ParamRegistry& reg) {
    const auto archive = read_archive(path);
    std::map<std::string, const ArchiveEntry*> by_name;
    for (const auto& e : archive) by_name[e.name] = &e;
    // Validate everything before writing anything.
    for (const auto& e : reg.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw LoadError("checkpoint " + path.string() + " lacks tensor " + e.name);
        const ArchiveEntry& a = *it->second;
        if (a.shape != e.shape) {
            throw LoadError("checkpoint tensor " + e.name + " has shape " + describe(a.shape) + ", model expects " +
                            describe(e.shape));
        }
        if (a.trainable != e.trainable) {
            throw LoadError("checkpoint tensor " + e.name + " has a different trainable flag than the model");
        }
    }
    if (archive.size() != reg.size()) {
        for (const auto& a : archive) {
            if (!reg.contains(a.name)) throw LoadError("checkpoint has tensor " + a.name + " unknown to the model");
        }
    }
    for (auto& e : reg.entries()) {
        const auto& values = by_name.at(e.name)->values;
        std::ranges::copy(values, e.tensor.mutable_data().begin());
    }
}

void save_optimizer(const std::filesystem::path& path, const Adam& adam) {
    std::vector<ArchiveEntry> entries;
    entries.push_back({"#step", false, {1}, {static_cast<double>(adam.step_count())}});
    for (const auto& [name, m] : adam.moments()) {
        entries.push_back({name + "#m", true, {m.m.size()}, m.m});
        entries.push_back({name + "#v", true, {m.v.size()}, m.v});
    }
    write_archive(path, entries);
}

void load_optimizer(const std::filesystem::path& path, Adam& adam) {
    std::int64_t step = -1;
    std::map<std::string, Adam::Moments> moments;
    for (auto& e : read_archive(path)) {
        if (e.name == "#step") {
            step = static_cast<std::int64_t>(e.values.at(0));
            continue;
        }
        const auto hash = e.name.rfind('#');
        if (hash == std::string::npos) throw LoadError(path.string() + ": unexpected optimizer entry " + e.name);
        const std::string base = e.name.substr(0, hash), kind = e.name.substr(hash + 1);
        if (kind == "m") {
            moments[base].m = std::move(e.values);
        } else if (kind == "v") {
            moments[base].v = std::move(e.values);
        } else {
            throw LoadError(path.string() + ": unexpected optimizer entry " + e.name);
        }
    }
    if (step < 0) throw LoadError(path.string() + ": optimizer state has no step counter");
    adam.restore(step, std::move(moments));
}

}  // namespace lmdetr
