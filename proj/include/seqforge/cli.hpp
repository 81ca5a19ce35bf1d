#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seqforge {

// Entry point behind the seqforge binary. Exit codes: 0 success, 1 usage
// error, 2 runtime error.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace seqforge
