#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace robdet {

/// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace robdet
