#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace slu::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration
/// error or refusal to overwrite. Failures print one line
/// "error: <category>: <detail>" on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slu::cli
