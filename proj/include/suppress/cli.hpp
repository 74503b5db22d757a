#pragma once

#include <string>
#include <vector>

namespace suppress {

/// Full command-line entry point. `args` excludes the program name. Exit
/// codes: 0 success, 1 runtime/data error, 2 usage error.
int run_cli(std::vector<std::string> args);
int run_cli(int argc, const char* const* argv);

}  // namespace suppress
