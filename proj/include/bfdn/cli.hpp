#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bfdn {

/// Exit codes: 0 success, 2 usage or validation failure, 1 runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bfdn
