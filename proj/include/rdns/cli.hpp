#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rdns {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerificationFailed = 1,
  kExitUsage = 2,
  kExitNumeric = 3,
};

/// Runs one invocation. `args` excludes the program name. Reports go to `out`, diagnostics
/// to `err`; every failure is mapped to an ExitCode rather than thrown.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace rdns
