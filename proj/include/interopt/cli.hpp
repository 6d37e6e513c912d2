#pragma once

namespace interopt {

// Full command-line front end. Exit codes: 0 success, 1 runtime or data
// error, 2 usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace interopt
