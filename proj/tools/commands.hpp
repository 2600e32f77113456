#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmkp::cli {

// Runs one subcommand; `args` excludes the program name. Returns the process
// exit code. Errors go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmkp::cli
