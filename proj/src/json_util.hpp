// SPDX-License-Identifier: Apache-2.0
//
// Strict object reader: every key must be consumed, otherwise ConfigError.

#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "lmdetr/errors.hpp"

namespace lmdetr::detail {

class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(context_ + "." + key + ": " + e.what());
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.contains(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace lmdetr::detail
