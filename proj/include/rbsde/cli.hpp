#pragma once

#include <string>
#include <vector>

namespace rbsde::cli {

// Exit codes: 0 ok, 2 validation failure, 3 solver failure, 4 verification
// gap exceeded.
int run(const std::vector<std::string>& args);

}  // namespace rbsde::cli
