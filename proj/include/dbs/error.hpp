// Copyright (C) 2026 The dbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dbs {

/// Bad argument or precondition violation by the caller.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// File could not be opened or read.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Remote endpoint could not be reached or the handshake did not complete.
class ConnectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Well-formed transport, ill-formed conversation.
class ProtocolError : public std::runtime_error {
public:
    enum class Kind { malformed, wrong_length, non_finite, version, remote, timeout };

    ProtocolError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace dbs
