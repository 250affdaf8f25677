#pragma once

#include <string>
#include <vector>

namespace evgen::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInputError = 2,
  kDiverged = 3,
};

/// Runs `evgen <subcommand> ...`; `args` excludes the program name.
/// Subcommands: synth, ingest, train-gmm, train-gan, generate, evaluate, sweep.
int run(const std::vector<std::string>& args);

int run(int argc, const char* const* argv);

}  // namespace evgen::cli
