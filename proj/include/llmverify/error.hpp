#pragma once

#include <stdexcept>
#include <string>

namespace llmverify {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed numeric input: empty sets, mixed dimensions, non-finite values.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Parse or schema failure in a config or JSONL file. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Lookup miss: embedding key, stake account, profile id.
class NotFound : public Error {
public:
    using Error::Error;
};

/// Remote service failure (transport or non-2xx status).
class TransportError : public Error {
public:
    using Error::Error;
};

/// Protocol-level precondition failure (no validators, inconclusive consensus, ...).
class ProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace llmverify
