#pragma once

#include <stdexcept>
#include <string>

namespace pic {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct RangeError : Error {
    explicit RangeError(const std::string& what) : Error(what) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error(what) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& what) : Error(what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

struct ProtocolError : Error {
    explicit ProtocolError(const std::string& what) : Error(what) {}
};

// Attribute set does not satisfy the access tree.
struct AuthorizationError : Error {
    explicit AuthorizationError(const std::string& what) : Error(what) {}
};

// Envelope failed authentication (tampered or wrong key).
struct AuthenticationError : Error {
    explicit AuthenticationError(const std::string& what) : Error(what) {}
};

} // namespace pic
