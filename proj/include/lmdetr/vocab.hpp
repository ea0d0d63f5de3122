// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lmdetr {

// Whitespace tokenizer over a closed word list. On disk: one token per
// line, token id = zero-based line number.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::optional<std::size_t> find(std::string_view token) const;
    // InputError when the token or id is not in the vocabulary.
    std::size_t id(std::string_view token) const;
    const std::string& token(std::size_t id) const;

    std::vector<std::size_t> encode(std::string_view text) const;
    std::string decode(std::span<const std::size_t> ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace lmdetr
