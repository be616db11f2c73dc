#pragma once

#include <iosfwd>

namespace cismvmr {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitParse = 2,
  kExitValidation = 3,
  kExitIdentification = 4,
  kExitSingular = 5,
};

/// Entry point of the command-line tool: estimate, prune, simulate and
/// diagnose subcommands. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cismvmr
