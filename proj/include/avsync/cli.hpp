// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace avsync {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,    ///< bad arguments or configuration
  kExitData = 2,     ///< unreadable, malformed or mismatched data
  kExitNumeric = 3,  ///< failed gradient check or non-finite loss
};

/// Maps a library exception to its exit status.
int exit_code_for(const std::exception& e) noexcept;

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace avsync
