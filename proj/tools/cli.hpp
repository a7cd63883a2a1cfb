#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tcd::cli {

/// Runs one `tcd` invocation. `args` excludes the program name. Returns
/// the process exit code: 0 success, 1 runtime failure, 2 bad usage or config.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tcd::cli
