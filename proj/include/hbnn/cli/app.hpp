#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hbnn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `hbnn` command line; args exclude the program name. Results go
/// to `out`, logs and diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace hbnn::cli
