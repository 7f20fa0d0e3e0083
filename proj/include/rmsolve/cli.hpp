#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rmsolve {

// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 invariant failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace rmsolve
