#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace luminark::cli {

// Dispatches one invocation. Exit code 0 on success, 1 on operational
// failure (with JSON diagnostics on stdout), 2 on usage error (one-line
// reason on stderr).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace luminark::cli
