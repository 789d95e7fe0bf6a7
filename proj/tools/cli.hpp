#pragma once

#include <string>
#include <vector>

namespace esc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the `esc` tool; args exclude the program name.
int run(const std::vector<std::string>& args);

}  // namespace esc::cli
