#pragma once

#include <string>

namespace seqvcr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point for the `gen`, `train`, `probe` and `eval` subcommands.
/// Relative output paths are placed under $SEQVCR_OUT when it is set.
int run_cli(int argc, char** argv);

std::string version_string();

}  // namespace seqvcr
