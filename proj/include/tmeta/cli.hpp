#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tmeta::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

/// Runs the tmeta command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tmeta::cli
