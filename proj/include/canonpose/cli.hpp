#pragma once

// Command-line front end: synth, train, eval and infer subcommands.
//
// Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
// 3 numerical abort.

namespace canonpose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

int run(int argc, const char* const* argv);

}  // namespace canonpose::cli
