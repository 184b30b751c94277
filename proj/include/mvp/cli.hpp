#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mvp {

inline constexpr std::string_view kToolVersion = "mvpshot 1.0.0";

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerificationFailed = 1,
  kExitUsage = 2,
  kExitIo = 3,
};

/// Runs the tool on `args` (without the program name). Human-readable output
/// goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

/// Shortest round-trip decimal form, independent of the C locale.
std::string format_real(double v);

}  // namespace mvp
