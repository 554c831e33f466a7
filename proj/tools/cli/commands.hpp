#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tumorkit::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;     // bad arguments, bad config, unreadable input
inline constexpr int kExitData = 3;      // dataset, checkpoint or arch errors
inline constexpr int kExitStartup = 4;   // serve could not start

// Parses argv and runs one subcommand. Results go to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tumorkit::cli
