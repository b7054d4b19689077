#pragma once

#include <iosfwd>

namespace cimd {

// Entry point of the `cimd` tool. Returns the process exit code; failures print one line
// to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cimd
