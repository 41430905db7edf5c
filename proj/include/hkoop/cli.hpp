#pragma once

#include <iosfwd>

namespace hkoop {

/// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point of the `hkoop` command line tool.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hkoop
