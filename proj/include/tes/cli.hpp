#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tes {

/// Entry point of the `tes-cli` tool. `args` excludes the program name.
/// Exit status: 0 success, 1 error (or non-COMPLETE terminal state for
/// `wait`), 2 `wait` timeout.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tes
