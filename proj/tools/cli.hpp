#pragma once

// Command-line front end: synth, metrics, train, eval, sweep-alpha.
// Exit codes: 0 ok, 2 config/usage error, 3 data error, 4 numerical abort.

#include <iosfwd>
#include <string>
#include <vector>

namespace jam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jam::cli
