#pragma once

#include <string>
#include <vector>

namespace cumix::cli {

inline constexpr const char* kToolVersion = "cumix 0.1.0";

// Exit codes: 0 success, 2 usage/config, 3 runtime, 4 artifact integrity.
int run_cli(std::vector<std::string> args);

}  // namespace cumix::cli
