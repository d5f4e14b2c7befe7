#pragma once

namespace cast {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `caststyle` tool. Subcommands: train, stylize,
/// evaluate, bank-inspect, train-classifier, make-toy-corpus. Diagnostics go
/// to stderr; failed commands leave no partial output files behind.
int run_cli(int argc, const char* const* argv);

}  // namespace cast
