#pragma once

#include <ostream>

namespace optalloc::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericalError = 3 };

// Entry point for the optalloc executable: optimize, bound, simulate,
// estimate. Tables go to `out`, diagnostics to `err`, artifacts to --out.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace optalloc::cli
