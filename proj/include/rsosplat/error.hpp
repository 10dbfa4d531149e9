#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rsosplat {

/// Exception carrying a stable, machine-readable error code such as
/// "MalformedFile" or "NonFiniteGradient". The CLI forwards the code verbatim
/// in its stderr error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace rsosplat
