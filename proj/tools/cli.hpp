#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nlmix::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kUsage = 2, kNotConverged = 3, kNumeric = 4 };

/// Version of the JSON layout written by `fit` and `bootstrap`.
inline constexpr int kSchemaVersion = 1;

/// Runs the command line `args` (without the program name). Primary output
/// goes to `out` unless an --output file is given; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nlmix::cli
