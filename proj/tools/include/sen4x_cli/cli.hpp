#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sen4x::cli {

/// Exit codes of the sen4x tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUnexpected = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Runs one sen4x command. `args` excludes the program name. Reports go to
/// `out`, diagnostics and the resolved configuration to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sen4x::cli
