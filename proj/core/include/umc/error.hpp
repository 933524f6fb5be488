#pragma once

#include <stdexcept>
#include <string>

namespace umc {

enum class ErrorKind {
    Shape,    // operand shapes incompatible with an op
    Config,   // invalid configuration or arguments
    Data,     // missing/corrupt files, bad manifests, empty buckets
    Numeric,  // non-finite values during training or evaluation
    Range,    // index or id out of range
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        fail(kind, message);
    }
}

}  // namespace umc
