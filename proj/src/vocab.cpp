// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/vocab.hpp"

#include <fstream>
#include <sstream>

#include "lmdetr/errors.hpp"

namespace lmdetr {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
            throw InputError("vocabulary entry " + std::to_string(i) + " is empty or contains whitespace");
        }
        if (!ids_.emplace(t, i).second) throw InputError("duplicate vocabulary entry '" + t + "'");
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open vocabulary file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    try {
        return Vocabulary(std::move(tokens));
    } catch (const InputError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::size_t Vocabulary::id(std::string_view token) const {
    auto found = find(token);
    if (!found) throw InputError("token '" + std::string(token) + "' is not in the vocabulary");
    return *found;
}

const std::string& Vocabulary::token(std::size_t id) const {
    if (id >= tokens_.size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
    }
    return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
    std::istringstream in{std::string(text)};
    std::vector<std::size_t> ids;
    std::string word;
    while (in >> word) ids.push_back(id(word));
    return ids;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
    std::string text;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) text += ' ';
        text += token(ids[i]);
    }
    return text;
}

}  // namespace lmdetr
