#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace asxai {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // verification failed or an unexpected error
  kExitUsage = 2,
  kExitInvalid = 3,  // ValidationError
  kExitIo = 4,       // IoError
  kExitDiverged = 5,
};

/// Runs one subcommand. `args` excludes the program name. Results go to
/// `out`; errors are written to `err` as a one-line JSON record.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace asxai
