#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace cprobe {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitInput = 3,
    kExitNumeric = 4,
};

// Runs the `probe` command line. args[0] is the program name. Never throws;
// every failure is reported on `err` and mapped to an ExitCode.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace cprobe
