// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sg2m {

/// Operand shapes or argument values that an operation cannot accept.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf, or a numeric precondition failed.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration or command-line usage.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable file (image, checkpoint, config).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of the differentiation graph (unreachable input, non-scalar output).
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace sg2m
