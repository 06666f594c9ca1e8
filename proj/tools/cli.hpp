#pragma once

#include <string>
#include <vector>

namespace moext::cli {

// Exit codes. Each failure class gets its own code.
enum Exit : int {
  kOk = 0,
  kFailure = 1,         // anything not listed below
  kUsage = 2,           // unknown flag, bad value, invalid configuration
  kMissingFile = 3,     // input file or directory absent or unreadable
  kSchema = 4,          // manifest, label or shape violation
  kNumeric = 5,         // training diverged or detection failed
  kMissingDataset = 6,  // a protocol's dataset has no manifest
  kCheckpoint = 7,      // corrupt or incompatible checkpoint
};

// Runs one command line; never throws. argv[0] is the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace moext::cli
