#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace npgrid {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs the command line `args` (without the program name).
/// Returns 0 on success, 1 on usage or validation errors, 2 on runtime errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace npgrid
