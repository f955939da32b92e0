#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lidec {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitInfeasible = 4,
};

/// Runs one command line (argv[0] is the program name). Results go to `out`
/// unless --out names a file; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lidec
