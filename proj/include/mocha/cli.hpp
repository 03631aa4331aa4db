#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mocha {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitRuntime = 3,
  kExitService = 4,
};

// Entry point of the `mocha` tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mocha
