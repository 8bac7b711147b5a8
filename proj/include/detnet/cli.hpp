#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace detnet {

// Entry point behind the `detnet` binary, separated for in-process testing.
// Exit codes: 0 success, 1 numeric-check failure, 2 usage/resolution error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace detnet
