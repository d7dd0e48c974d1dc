#pragma once

#include <string>
#include <vector>

namespace iql {

/// Command-line front end. Returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on runtime/divergence errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace iql
