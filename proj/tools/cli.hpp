#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rotatek::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kNumerical = 3;

// Runs the command line `args` (args[0] is the program name) writing results
// to `out` and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rotatek::cli
