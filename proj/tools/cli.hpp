#pragma once

// The `dsnet` command-line front end. Exit codes: 0 success, 1 validation /
// parse / I/O error or a disaster lint finding, 2 runtime failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace dsnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dsnet::cli
