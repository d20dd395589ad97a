#pragma once

namespace forgetlab {

// Full command-line entry point (gen-data | pretrain | run | sweep | plot).
// Returns the process exit code: 0 ok, 1 config error, 2 numeric error,
// 3 io error.
int run_cli(int argc, const char* const* argv);

}  // namespace forgetlab
