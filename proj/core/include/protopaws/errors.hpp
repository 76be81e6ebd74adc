#pragma once

#include <stdexcept>
#include <string>

namespace protopaws {

/// Broad failure categories. The command-line tool maps each to an exit code.
enum class ErrorKind {
    config,   ///< bad or missing configuration
    format,   ///< malformed input file
    io,       ///< file could not be opened, read or written
    contract, ///< caller violated an operation's precondition
    numeric,  ///< non-finite values or a degenerate computation
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

} // namespace protopaws
