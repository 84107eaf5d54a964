#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace projektor {

/// Runs one CLI invocation. Returns 0 on success, 1 on usage errors and 2 on
/// numeric or fitting failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace projektor
