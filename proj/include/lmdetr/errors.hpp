// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module.

#pragma once

#include <stdexcept>
#include <string>

namespace lmdetr {

// Tensor extents that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Value outside the domain of a function (log of a non-positive number, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Caller broke a documented precondition (non-scalar loss, M > Q, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed user data: out-of-vocabulary token, empty span, degenerate box.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Checkpoint or dataset file that cannot be read back against the model.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lmdetr
