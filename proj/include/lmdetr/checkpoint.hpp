// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive. Layout (all integers little-endian):
//
//   "LMDTCKPT"  u32 version  u64 entry_count
//   per entry:  u32 name_len  name bytes  u8 trainable  u32 rank  u64 dims[rank]
//               f64 values[product(dims)]
//
// Values are written as raw IEEE-754 doubles, so a round trip is bit-exact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lmdetr/optim.hpp"
#include "lmdetr/params.hpp"

namespace lmdetr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ArchiveEntry {
    std::string name;
    bool trainable = false;
    Shape shape;
    std::vector<double> values;
};

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries);
// LoadError on a malformed or truncated file.
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ParamRegistry& reg);
// Overwrites registry values in place. LoadError naming the first tensor whose
// name, shape or trainable flag disagrees, or a missing/extra tensor.
void load_checkpoint(const std::filesystem::path& path, ParamRegistry& reg);

// Adam moments as "<name>#m" / "<name>#v" entries plus a "#step" scalar.
void save_optimizer(const std::filesystem::path& path, const Adam& adam);
void load_optimizer(const std::filesystem::path& path, Adam& adam);

}  // namespace lmdetr
