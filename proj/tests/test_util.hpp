#pragma once

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "umc/error.hpp"

namespace umc::test {

/// Runs `f` and returns the kind of the umc::Error it throws; fails the test otherwise.
template <typename F>
ErrorKind error_kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected umc::Error";
    return ErrorKind::Config;
}

}  // namespace umc::test
