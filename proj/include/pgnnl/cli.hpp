#pragma once

// Command-line entry point: gen-data, train, eval, bench, sweep-lambda, search.

#include <ostream>
#include <string>
#include <vector>

namespace pgnnl {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDivergence = 3,
  kExitIo = 4,
};

/// `args` excludes the program name. Never throws; errors become exit codes
/// with a message on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pgnnl
