#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "stagewalk/error.hpp"

namespace stagewalk {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 2,         // malformed input or failed validation
  kExitDegenerate = 3,    // data cannot support the fit
  kExitUndefined = 4,     // derived quantity undefined for these estimates
};

int exit_code_for(ErrorCode code) noexcept;

/// Runs the command line `args` (args[0] is the program name). Human tables go
/// to `out`; failures are written to `err` as one JSON object
/// {"error": <code>, "message": ..., "exit_code": ...}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stagewalk
