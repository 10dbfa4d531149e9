#pragma once

#include "rsosplat/error.hpp"

#include <functional>
#include <string>

namespace rsosplat::testing {

/// Code of the rsosplat::Error thrown by fn, or "" when nothing is thrown.
inline std::string error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

} // namespace rsosplat::testing
