#pragma once

#include <iosfwd>

namespace raw {

// Runs the rawmark command line. Returns 0 on success, 2 on usage errors
// (unknown flags, missing inputs, infeasible alpha) and 1 on runtime
// failures, with diagnostics written to `err`.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace raw
