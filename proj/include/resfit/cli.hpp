#pragma once

#include <string>
#include <vector>

namespace resfit {

/// Runs one command-line invocation. `args` holds the arguments in order,
/// without the program name. Returns the process exit code: 0 success,
/// 2 usage error, 3 data error, 4 numerical failure. Failures also emit a
/// one-line JSON error record on stderr.
int cli_dispatch(const std::vector<std::string>& args);

} // namespace resfit
