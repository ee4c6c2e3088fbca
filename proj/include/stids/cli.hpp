#pragma once

#include <string>
#include <vector>

namespace stids {

// Command-line front end: prepare, train, selftrain, evaluate, ablate,
// sweep. Returns the process exit code (0 ok, 2 config error, 3 runtime
// failure) so tests can drive it in-process.
int run_cli(const std::vector<std::string>& args);

}  // namespace stids
