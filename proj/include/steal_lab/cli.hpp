#pragma once

namespace steal_lab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the steal-lab command line. Subcommands: gen-data,
/// train-target, serve, steal, evaluate, run-all, plot.
int cli_main(int argc, const char* const* argv);

}  // namespace steal_lab
