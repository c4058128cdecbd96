#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace posediff {

// Parses one command line (without the program name) and runs the command end
// to end.  Returns the process exit code: 0 on success, 1 on runtime
// failures, 2 on usage or configuration errors.  Output streams are injected
// so tests can run commands in-process and capture what they print.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace posediff
