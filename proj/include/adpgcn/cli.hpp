#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adpgcn::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Runs one subcommand (synth, train, eval, ablate, export-adjacency) and
/// maps library errors onto the exit-code contract.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace adpgcn::cli
