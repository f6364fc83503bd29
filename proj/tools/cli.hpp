#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cultalign::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kValidationFailure = 2 };

/// Entry point shared by the executable and the tests. `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace cultalign::cli
