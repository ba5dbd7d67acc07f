#pragma once

#include <iosfwd>

namespace representor::cli {

// Exit codes: 0 success, 2 usage/config/input error, 3 numeric failure,
// 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace representor::cli
